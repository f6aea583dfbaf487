#include <cmath>

#include "doctest.h"
#include "irbnn/ede.hpp"
#include "irbnn/errors.hpp"

using namespace irbnn;

TEST_SUITE("ede") {

TEST_CASE("schedule hits the endpoints and the midpoint exactly") {
  EdeSchedule sched{0.1, 10.0, 100};
  CHECK(schedule_at(sched, 0).t == 0.1);
  CHECK(schedule_at(sched, 0).k == 10.0);
  CHECK(schedule_at(sched, 50).t == 1.0);
  CHECK(schedule_at(sched, 50).k == 1.0);
  CHECK(schedule_at(sched, 100).t == 10.0);
  CHECK(schedule_at(sched, 100).k == 1.0);
}

TEST_CASE("temperature rises strictly, k decays to one and stays there") {
  EdeSchedule sched{0.1, 10.0, 40};
  double prev_t = 0.0;
  double prev_k = 1e300;
  for (int i = 0; i <= 40; ++i) {
    EdeParams p = schedule_at(sched, i);
    CHECK(p.t > prev_t);
    CHECK(p.k <= prev_k);
    CHECK(p.k * p.t == doctest::Approx(std::max(1.0, p.t)).epsilon(1e-12));
    if (2 * i >= 40) CHECK(p.k == 1.0);
    prev_t = p.t;
    prev_k = p.k;
  }
}

TEST_CASE("schedule is symmetric about its geometric midpoint") {
  EdeSchedule sched{0.1, 10.0, 20};
  for (int i = 0; i <= 20; ++i) {
    const double a = schedule_at(sched, i).t;
    const double b = schedule_at(sched, 20 - i).t;
    CHECK(a * b == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("one-epoch schedule still covers the full range") {
  EdeSchedule sched{0.1, 10.0, 1};
  CHECK(schedule_at(sched, 0).t == 0.1);
  CHECK(schedule_at(sched, 1).t == 10.0);
}

TEST_CASE("schedule validates its inputs") {
  CHECK_THROWS_AS(schedule_at(EdeSchedule{0.1, 10.0, 0}, 0), DomainError);
  CHECK_THROWS_AS(schedule_at(EdeSchedule{0.0, 10.0, 5}, 0), DomainError);
  CHECK_THROWS_AS(schedule_at(EdeSchedule{5.0, 0.5, 5}, 0), DomainError);
  CHECK_THROWS_AS(schedule_at(EdeSchedule{0.1, 10.0, 5}, -1), DomainError);
  CHECK_THROWS_AS(schedule_at(EdeSchedule{0.1, 10.0, 5}, 6), DomainError);
}

TEST_CASE("surrogate values at frozen points") {
  // Early training: t = 0.1, k = 10, so g(1) = 10 tanh(0.1).
  EdeParams early{0.1, 10.0, 0};
  CHECK(ede_g(1.0, early) == doctest::Approx(0.9966799462495581).epsilon(1e-15));
  // Mid training: t = k = 1, plain tanh.
  EdeParams mid{1.0, 1.0, 50};
  CHECK(ede_g(0.0, mid) == 0.0);
  CHECK(ede_grad(1.0, mid) == doctest::Approx(0.41997434161402614).epsilon(1e-15));
}

TEST_CASE("derivative peak at zero equals max(1, t)") {
  EdeSchedule sched{0.1, 10.0, 16};
  for (int i = 0; i <= 16; ++i) {
    EdeParams p = schedule_at(sched, i);
    CHECK(ede_grad(0.0, p) == doctest::Approx(std::max(1.0, p.t)).epsilon(1e-12));
  }
}

TEST_CASE("derivative is even and saturates far from zero") {
  EdeParams late{10.0, 1.0, 100};
  CHECK(ede_grad(2.5, late) == ede_grad(-2.5, late));
  CHECK(ede_grad(3.0, late) < 1e-10);
  CHECK(ede_grad(3.0, late) >= 0.0);
}

TEST_CASE("clip estimator includes the boundary, identity never gates") {
  CHECK(ste_clip_grad(-1.0) == 1.0);
  CHECK(ste_clip_grad(1.0) == 1.0);
  CHECK(ste_clip_grad(0.0) == 1.0);
  CHECK(ste_clip_grad(1.0000001) == 0.0);
  CHECK(ste_clip_grad(-2.0) == 0.0);
  CHECK(ste_identity_grad(100.0) == 1.0);
  CHECK(ste_identity_grad(-100.0) == 1.0);
}

}  // TEST_SUITE

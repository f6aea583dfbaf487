#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "irbnn/bitkernel.hpp"
#include "irbnn/errors.hpp"
#include "irbnn/tensor.hpp"

using namespace irbnn;

namespace {

// Plain float dot product, the reference the packed path must match exactly.
double float_dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Tensor random_signs(Rng& rng, std::int64_t n) {
  Tensor t({n});
  for (std::int64_t i = 0; i < n; ++i) t[i] = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
  return t;
}

}  // namespace

TEST_SUITE("bitkernel") {

TEST_CASE("hand traced dot products") {
  // (+1,-1,+1) . (+1,+1,-1): agree on 1 of 3 positions, 2*1 - 3 = -1.
  CHECK(xnor_popcount_dot(pack(Tensor::of({1, -1, 1})), pack(Tensor::of({1, 1, -1}))) == -1);
  // (+1,-1) . (+1,+1) = 0.
  CHECK(xnor_popcount_dot(pack(Tensor::of({1, -1})), pack(Tensor::of({1, 1}))) == 0);
  // all-agree length 4 = 4.
  CHECK(xnor_popcount_dot(pack(Tensor::of({1, 1, 1, 1})), pack(Tensor::of({1, 1, 1, 1}))) == 4);
  // all-disagree length 4 = -4.
  CHECK(xnor_popcount_dot(pack(Tensor::of({1, 1, 1, 1})), pack(Tensor::full({4}, -1.0))) == -4);
}

TEST_CASE("packed dot equals float dot across word boundaries") {
  Rng rng(11);
  for (std::int64_t n : {1, 2, 63, 64, 65, 127, 128, 129, 300, 1000}) {
    Tensor a = random_signs(rng, n);
    Tensor b = random_signs(rng, n);
    const double ref = float_dot(a, b);
    CHECK(static_cast<double>(xnor_popcount_dot(pack(a), pack(b))) == ref);
  }
}

TEST_CASE("garbage in padding bits cannot reach a result") {
  Tensor a = Tensor::of({1, -1, 1, 1, -1});
  Tensor b = Tensor::of({-1, -1, 1, -1, -1});
  const std::int64_t ref = xnor_popcount_dot(pack(a), pack(b));
  PackedBitTensor pa = pack(a);
  PackedBitTensor pb = pack(b);
  pa.words[0] |= ~pa.tail_mask();  // set every padding bit
  pb.words[0] |= 0xDEADBEEF00000000ull & ~pb.tail_mask();
  CHECK(xnor_popcount_dot(pa, pb) == ref);
}

TEST_CASE("pack and unpack roundtrip") {
  Rng rng(13);
  Tensor v = random_signs(rng, 131);
  Tensor back = unpack(pack(v));
  REQUIRE(back.size() == 131);
  for (std::int64_t i = 0; i < 131; ++i) CHECK(back[i] == v[i]);

  Tensor m({3, 70});
  for (double& x : m.storage()) x = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
  Tensor mback = unpack(pack(m));
  REQUIRE(mback.rank() == 2);
  REQUIRE(mback.dim(0) == 3);
  REQUIRE(mback.dim(1) == 70);
  for (std::int64_t i = 0; i < m.size(); ++i) CHECK(mback[i] == m[i]);
}

TEST_CASE("pack rejects values other than plus or minus one") {
  CHECK_THROWS_AS(pack(Tensor::of({1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(pack(Tensor::of({1.0, 0.5, -1.0})), DomainError);
  CHECK_THROWS_AS(pack_columns(Tensor({2, 2}, {1, -1, 2, 1})), DomainError);
}

TEST_CASE("pack_columns stores each matrix column as a row") {
  // 2x3 matrix, columns (1,-1), (-1,-1), (1,1).
  Tensor m({2, 3}, {1, -1, 1, -1, -1, 1});
  PackedBitTensor p = pack_columns(m);
  REQUIRE(p.rows == 3);
  REQUIRE(p.bits_per_row == 2);
  CHECK((p.row(0)[0] & 3) == 0b01);  // +1 then -1, LSB first
  CHECK((p.row(1)[0] & 3) == 0b00);
  CHECK((p.row(2)[0] & 3) == 0b11);
}

TEST_CASE("packed_gemm matches the float emulation bit for bit") {
  Rng rng(17);
  const std::int64_t m = 5, k = 200, n = 7;
  Tensor w({m, k});
  for (double& x : w.storage()) x = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
  Tensor act({k, n});
  for (double& x : act.storage()) x = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
  const std::vector<int> shifts = {0, 1, -3, 7, -1};

  Tensor ref = matmul(w, act);
  for (std::int64_t i = 0; i < m; ++i) {
    const double sc = std::ldexp(1.0, shifts[static_cast<std::size_t>(i)]);
    if (sc != 1.0)
      for (std::int64_t j = 0; j < n; ++j) ref.at2(i, j) *= sc;
  }

  Tensor got = packed_gemm(pack(w), pack_columns(act), shifts);
  REQUIRE(got.rank() == 2);
  REQUIRE(got.dim(0) == m);
  REQUIRE(got.dim(1) == n);
  for (std::int64_t i = 0; i < got.size(); ++i) CHECK(got[i] == ref[i]);
}

TEST_CASE("packed_gemm_noscale returns raw integer dots") {
  Tensor w({2, 3}, {1, 1, -1, -1, -1, -1});
  Tensor act({3, 2}, {1, -1, 1, -1, 1, -1});
  Tensor got = packed_gemm_noscale(pack(w), pack_columns(act));
  Tensor ref = matmul(w, act);
  for (std::int64_t i = 0; i < got.size(); ++i) CHECK(got[i] == ref[i]);
}

TEST_CASE("packed_gemm validates inner dimensions") {
  Tensor w({2, 5});
  Tensor act({6, 2});
  for (double& x : w.storage()) x = 1.0;
  for (double& x : act.storage()) x = 1.0;
  CHECK_THROWS_AS(packed_gemm(pack(w), pack_columns(act), std::vector<int>(2, 0)),
                  DimensionError);
  CHECK_THROWS_AS(packed_gemm(pack(w), pack_columns(transpose2(act)), std::vector<int>(1, 0)),
                  DimensionError);
}

TEST_CASE("popcount fallback agrees with the primary on random words") {
  CHECK(popcount64(0) == 0);
  CHECK(popcount64(~std::uint64_t{0}) == 64);
  CHECK(popcount64_portable(0x8000000000000001ull) == 2);
  Rng rng(19);
  for (int i = 0; i < 2000; ++i) {
    const std::uint64_t w = rng.next_u64();
    CHECK(popcount64(w) == popcount64_portable(w));
  }
}

TEST_CASE("tail mask covers exactly the logical bits") {
  CHECK(pack(Tensor::full({64}, 1.0)).tail_mask() == ~std::uint64_t{0});
  CHECK(pack(Tensor::full({1}, 1.0)).tail_mask() == 1);
  CHECK(pack(Tensor::full({65}, 1.0)).tail_mask() == 1);
  CHECK(pack(Tensor::full({3}, 1.0)).tail_mask() == 7);
}

TEST_CASE("bench runs its small suite and rejects unknown names") {
  std::vector<BenchCase> cases = bench_suite("small", 3);
  REQUIRE(cases.size() >= 2);
  for (const BenchCase& c : cases) {
    CHECK(c.repetitions == 3);
    CHECK(c.float_ms_median >= c.float_ms_min);
    CHECK(c.float_ms_median <= c.float_ms_max);
    CHECK(c.packed_ms_median > 0.0);
    CHECK(c.speedup == doctest::Approx(c.float_ms_median / c.packed_ms_median));
  }
  const std::string table = format_bench_table(cases);
  CHECK(table.find(cases[0].name) != std::string::npos);
  CHECK(table.find("speedup") != std::string::npos);
  CHECK_THROWS_AS(bench_suite("bogus", 3), ConfigError);
}

}  // TEST_SUITE

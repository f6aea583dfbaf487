#include "irbnn/ede.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace irbnn {

EdeParams schedule_at(const EdeSchedule& sched, int epoch) {
  if (sched.total_epochs < 1) throw DomainError("schedule needs at least 1 epoch");
  if (!(sched.t_min > 0.0) || sched.t_min > sched.t_max)
    throw DomainError("schedule requires 0 < t_min <= t_max");
  if (epoch < 0 || epoch > sched.total_epochs)
    throw DomainError("epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(sched.total_epochs) + "]");
  const double frac = static_cast<double>(epoch) / static_cast<double>(sched.total_epochs);
  double t;
  if (epoch == 0) {
    t = sched.t_min;
  } else if (epoch == sched.total_epochs) {
    t = sched.t_max;
  } else if (2 * epoch == sched.total_epochs) {
    // exact geometric midpoint; pow would land here only up to rounding
    t = std::sqrt(sched.t_min * sched.t_max);
  } else {
    t = sched.t_min * std::pow(sched.t_max / sched.t_min, frac);
  }
  const double k = std::max(1.0 / t, 1.0);
  return EdeParams{t, k, epoch};
}

double ede_g(double x, const EdeParams& p) { return p.k * std::tanh(p.t * x); }

double ede_grad(double x, const EdeParams& p) {
  const double th = std::tanh(p.t * x);
  return p.k * p.t * (1.0 - th * th);
}

}  // namespace irbnn

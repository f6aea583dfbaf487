#pragma once

#include "irbnn/errors.hpp"

namespace irbnn {

/// Geometric trajectory of the gradient-estimator temperature t over a
/// training run, from t_min at epoch 0 to t_max at epoch N.
struct EdeSchedule {
  double t_min = 0.1;
  double t_max = 10.0;
  int total_epochs = 1;
};

/// Control variables of the estimator at one epoch. k * t = max(1, t), so
/// the derivative peak g'(0) stays at 1 through the first half of training
/// and then grows toward t_max.
struct EdeParams {
  double t = 1.0;
  double k = 1.0;
  int epoch = 0;
};

/// Parameters at epoch i: t = t_min * (t_max / t_min)^(i/N), k = max(1/t, 1).
/// Valid for 0 <= i <= N; both endpoints are hit exactly.
EdeParams schedule_at(const EdeSchedule& sched, int epoch);

/// The soft sign surrogate g(x) = k * tanh(t * x).
double ede_g(double x, const EdeParams& p);

/// g'(x) = k * t * (1 - tanh^2(t * x)); even, peaked at x = 0 with value k*t.
double ede_grad(double x, const EdeParams& p);

/// Identity estimator: the gradient passes through unchanged.
inline double ste_identity_grad(double) { return 1.0; }

/// Clip estimator: gradient 1 inside [-1, +1] (boundary included), 0 outside.
inline double ste_clip_grad(double x) { return (x >= -1.0 && x <= 1.0) ? 1.0 : 0.0; }

}  // namespace irbnn

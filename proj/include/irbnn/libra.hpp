#pragma once

#include <cstdint>
#include <vector>

#include "irbnn/tensor.hpp"

namespace irbnn {

/// Balanced, standardized weights: zero mean, unit population std.
struct StandardizedWeights {
  Tensor values;
  double source_mean = 0.0;
  double source_std = 0.0;
};

/// Sign tensor in {-1,+1} plus one integer bit-shift scale per output
/// channel. The reconstruction of channel c is signs[c] * 2^shift[c]; there
/// is no floating-point scalar anywhere in the binary path.
struct BinarizedWeights {
  Tensor signs;
  std::vector<int> shifts;
  std::int64_t channel_count = 0;

  double scale(std::int64_t channel) const;
};

struct EntropyReport {
  double p_hat = 0.0;
  double entropy_nats = 0.0;
  double max_entropy_nats = 0.0;  // ln 2

  double ratio() const { return entropy_nats / max_entropy_nats; }
};

/// Which pieces of the balanced binarization pipeline are active. The full
/// pipeline is {balance, standardize, shift}; the ablation arms switch
/// individual pieces off.
struct WeightTransform {
  bool balance = true;
  bool standardize = true;
  bool shift = true;

  static WeightTransform full() { return {true, true, true}; }
  static WeightTransform no_standardize() { return {true, false, true}; }
  static WeightTransform no_shift() { return {true, true, false}; }
  static WeightTransform vanilla() { return {false, false, false}; }
};

/// (w - mean(w)) / std_pop(w - mean(w)). Constant input is a
/// degenerate-weights error; callers decide how to react, there is no
/// epsilon fudge here.
StandardizedWeights standardize(const Tensor& w);

/// Elementwise sign with sign(0) = +1. Output entries are exactly +-1.0.
Tensor sign_binarize(const Tensor& x);

/// Round-half-to-even, independent of the ambient rounding mode.
double round_half_even(double x);

/// Optimal integer bit-shift in the log domain:
/// round_half_even(log2(||v||_1 / n)). Zero L1 norm is degenerate.
int shift_scale(const Tensor& values);
int shift_scale(const StandardizedWeights& w_std);

/// Exhaustive search over s in [s_min, s_max] minimizing
/// ||v - sign(v) * 2^s||^2. Ties break toward smaller |s|, then smaller s.
/// Serves as the independent oracle for shift_scale.
int brute_force_shift(const Tensor& values, int s_min = -8, int s_max = 8);
int brute_force_shift(const StandardizedWeights& w_std, int s_min = -8, int s_max = 8);

/// Balanced binarization of a weight tensor, one channel per leading-dim
/// slice (rank-1 tensors are a single channel): balance and standardize the
/// channel, take signs, pick its bit-shift scale. `transform` switches the
/// pipeline pieces for the ablation arms; `pre_sign` (optional) receives the
/// transformed values the signs were taken from, which the backward pass
/// evaluates its estimator at.
BinarizedWeights binarize_weights(const Tensor& w, const WeightTransform& transform,
                                  Tensor* pre_sign = nullptr);

/// The full pipeline: balance, standardize, sign, bit-shift scale.
BinarizedWeights libra_pb(const Tensor& w);

/// Activation binarization is plain sign: no balancing is applied on the
/// activation side.
Tensor binarize_activations(const Tensor& a);

/// Bernoulli entropy of a +-1 tensor in nats, with p estimated as the +1
/// fraction and the 0 * ln 0 = 0 convention.
EntropyReport bernoulli_entropy(const Tensor& b);

/// Entropy from a +1 count out of n, same conventions as above.
EntropyReport bernoulli_entropy_from_counts(std::int64_t plus_ones, std::int64_t n);

/// Sum of squared differences ||x - q||^2.
double quantization_error(const Tensor& x, const Tensor& q);

/// Reconstruction signs[i] * 2^shift[channel] as a dense tensor.
Tensor reconstruct(const BinarizedWeights& q);

/// Number of leading-dim channels a weight tensor binarizes over.
std::int64_t weight_channel_count(const Tensor& w);

}  // namespace irbnn

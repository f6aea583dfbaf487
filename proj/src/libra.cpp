#include "irbnn/libra.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace irbnn {

namespace {

constexpr double kLn2 = 0.6931471805599453;

double pow2i(int s) { return std::ldexp(1.0, s); }

}  // namespace

double BinarizedWeights::scale(std::int64_t channel) const {
  return pow2i(shifts[static_cast<std::size_t>(channel)]);
}

StandardizedWeights standardize(const Tensor& w) {
  if (w.size() < 2) throw DimensionError("standardize needs at least 2 elements");
  const double m = mean(w);
  Tensor centered = w;
  for (double& v : centered.storage()) v -= m;
  const double sd = std_pop(centered);
  if (sd == 0.0)
    throw DegenerateWeightsError("constant weights: standard deviation is zero");
  for (double& v : centered.storage()) v /= sd;
  return StandardizedWeights{std::move(centered), m, sd};
}

Tensor sign_binarize(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.storage()) v = (v >= 0.0) ? 1.0 : -1.0;
  return out;
}

double round_half_even(double x) {
  const double f = std::floor(x);
  const double frac = x - f;
  if (frac > 0.5) return f + 1.0;
  if (frac < 0.5) return f;
  return (std::fmod(f, 2.0) == 0.0) ? f : f + 1.0;
}

namespace {

int shift_scale_impl(const double* p, std::int64_t n, std::int64_t channel) {
  double l1 = 0.0;
  for (std::int64_t i = 0; i < n; ++i) l1 += std::fabs(p[i]);
  if (l1 == 0.0)
    throw DegenerateWeightsError("zero L1 norm in channel " + std::to_string(channel));
  return static_cast<int>(round_half_even(std::log2(l1 / static_cast<double>(n))));
}

int brute_force_shift_impl(const double* p, std::int64_t n, int s_min, int s_max) {
  double l1 = 0.0;
  for (std::int64_t i = 0; i < n; ++i) l1 += std::fabs(p[i]);
  if (l1 == 0.0) throw DegenerateWeightsError("zero L1 norm");
  int best_s = 0;
  double best_j = std::numeric_limits<double>::infinity();
  for (int s = s_min; s <= s_max; ++s) {
    const double c = pow2i(s);
    double j = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double b = (p[i] >= 0.0) ? c : -c;
      const double d = p[i] - b;
      j += d * d;
    }
    const bool better = j < best_j ||
                        (j == best_j && (std::abs(s) < std::abs(best_s) ||
                                         (std::abs(s) == std::abs(best_s) && s < best_s)));
    if (better) {
      best_j = j;
      best_s = s;
    }
  }
  return best_s;
}

}  // namespace

int shift_scale(const Tensor& values) {
  if (values.empty()) throw DimensionError("shift_scale of empty tensor");
  return shift_scale_impl(values.data(), values.size(), 0);
}

int shift_scale(const StandardizedWeights& w_std) { return shift_scale(w_std.values); }

int brute_force_shift(const Tensor& values, int s_min, int s_max) {
  if (values.empty()) throw DimensionError("brute_force_shift of empty tensor");
  return brute_force_shift_impl(values.data(), values.size(), s_min, s_max);
}

int brute_force_shift(const StandardizedWeights& w_std, int s_min, int s_max) {
  return brute_force_shift(w_std.values, s_min, s_max);
}

std::int64_t weight_channel_count(const Tensor& w) {
  return w.rank() >= 2 ? w.dim(0) : 1;
}

BinarizedWeights binarize_weights(const Tensor& w, const WeightTransform& transform,
                                  Tensor* pre_sign) {
  if (w.empty()) throw DimensionError("binarize_weights of empty tensor");
  const std::int64_t channels = weight_channel_count(w);
  const std::int64_t per = w.size() / channels;

  Tensor transformed = w;
  BinarizedWeights out;
  out.channel_count = channels;
  out.shifts.assign(static_cast<std::size_t>(channels), 0);

  for (std::int64_t c = 0; c < channels; ++c) {
    double* p = transformed.data() + c * per;
    if (transform.balance) {
      double m = 0.0;
      for (std::int64_t i = 0; i < per; ++i) m += p[i];
      m /= static_cast<double>(per);
      for (std::int64_t i = 0; i < per; ++i) p[i] -= m;
    }
    if (transform.standardize) {
      double var = 0.0;
      for (std::int64_t i = 0; i < per; ++i) var += p[i] * p[i];
      if (transform.balance == false) {
        // population std is about the channel mean regardless of balancing
        double m = 0.0;
        for (std::int64_t i = 0; i < per; ++i) m += p[i];
        m /= static_cast<double>(per);
        var = 0.0;
        for (std::int64_t i = 0; i < per; ++i) var += (p[i] - m) * (p[i] - m);
      }
      const double sd = std::sqrt(var / static_cast<double>(per));
      if (sd == 0.0)
        throw DegenerateWeightsError("constant weights in channel " + std::to_string(c));
      for (std::int64_t i = 0; i < per; ++i) p[i] /= sd;
    }
    if (transform.shift) {
      out.shifts[static_cast<std::size_t>(c)] = shift_scale_impl(p, per, c);
    }
  }

  out.signs = sign_binarize(transformed);
  if (pre_sign != nullptr) *pre_sign = std::move(transformed);
  return out;
}

BinarizedWeights libra_pb(const Tensor& w) {
  return binarize_weights(w, WeightTransform::full(), nullptr);
}

Tensor binarize_activations(const Tensor& a) { return sign_binarize(a); }

EntropyReport bernoulli_entropy_from_counts(std::int64_t plus_ones, std::int64_t n) {
  if (n <= 0) throw DimensionError("entropy of empty tensor");
  const double p = static_cast<double>(plus_ones) / static_cast<double>(n);
  auto plogp = [](double q) { return q > 0.0 ? -q * std::log(q) : 0.0; };
  return EntropyReport{p, plogp(p) + plogp(1.0 - p), kLn2};
}

EntropyReport bernoulli_entropy(const Tensor& b) {
  if (b.empty()) throw DimensionError("entropy of empty tensor");
  std::int64_t plus = 0;
  for (double v : b.storage()) {
    if (v == 1.0)
      ++plus;
    else if (v != -1.0)
      throw DomainError("bernoulli_entropy: entry " + std::to_string(v) + " is not +-1");
  }
  return bernoulli_entropy_from_counts(plus, b.size());
}

double quantization_error(const Tensor& x, const Tensor& q) {
  if (!x.same_shape(q)) throw DimensionError("quantization_error shape mismatch");
  double acc = 0.0;
  const double* px = x.data();
  const double* pq = q.data();
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = px[i] - pq[i];
    acc += d * d;
  }
  return acc;
}

Tensor reconstruct(const BinarizedWeights& q) {
  Tensor out = q.signs;
  const std::int64_t per = out.size() / q.channel_count;
  for (std::int64_t c = 0; c < q.channel_count; ++c) {
    const double sc = q.scale(c);
    double* p = out.data() + c * per;
    for (std::int64_t i = 0; i < per; ++i) p[i] *= sc;
  }
  return out;
}

}  // namespace irbnn

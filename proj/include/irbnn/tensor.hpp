#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "irbnn/errors.hpp"

namespace irbnn {

/// Dense n-dimensional tensor of 64-bit floats, row-major flat storage.
///
/// Tensors are plain values: copying copies the data, and every free
/// function below is pure. All training-time math runs in double precision
/// so the finite-difference checks have headroom.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape. Dimensions must be positive.
  explicit Tensor(std::vector<std::int64_t> shape);

  Tensor(std::vector<std::int64_t> shape, std::vector<double> data);

  /// 1-d tensor from a braced list, mostly for tests and small fixtures.
  static Tensor of(std::initializer_list<double> values);

  static Tensor full(std::vector<std::int64_t> shape, double value);

  const std::vector<std::int64_t>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }

  double at2(std::int64_t i, std::int64_t j) const { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  double& at2(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }

  /// Same data, new shape; element count must match.
  Tensor reshaped(std::vector<std::int64_t> shape) const;

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

/// Counter-based deterministic generator: the draw sequence is a pure
/// function of (seed, counter), so identical seeds replay identical
/// streams with no OS entropy involved.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

  /// Restores a generator mid-stream (checkpoint resume).
  Rng(std::uint64_t seed, std::uint64_t counter) : seed_(seed), counter_(counter) {}

  std::uint64_t next_u64();

  /// Uniform in the open interval (0, 1).
  double next_uniform();

  /// Standard normal via Box-Muller.
  double next_normal();

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t next_below(std::uint64_t n);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

/// i.i.d. normal draws with the given mean and spread. stddev = 0 yields a
/// constant tensor.
Tensor rand_normal(Rng& rng, std::vector<std::int64_t> shape, double mean, double stddev);

/// C = A x B for 2-d tensors, accumulated in doubles. The contraction adds
/// contributions in ascending k order for every output cell, so the result
/// is bit-identical to the plain triple loop.
Tensor matmul(const Tensor& a, const Tensor& b);

/// matmul into preallocated row-major storage of size a.dim(0) * b.dim(1).
void matmul_into(const Tensor& a, const Tensor& b, double* out);

/// Lowers a [c, h, w] image to a [c*kh*kw, oh*ow] matrix whose column j is
/// the receptive field of output position j. Padding contributes zeros.
Tensor im2col(const Tensor& input, int kh, int kw, int stride, int pad);

void im2col_into(const double* input, int c, int h, int w, int kh, int kw, int stride, int pad,
                 double* out, std::int64_t out_stride);

/// Adjoint of im2col: scatters columns back onto a zeroed [c, h, w] image,
/// accumulating where receptive fields overlap.
Tensor col2im(const Tensor& cols, int c, int h, int w, int kh, int kw, int stride, int pad);

void col2im_into(const double* cols, std::int64_t cols_stride, int c, int h, int w, int kh, int kw,
                 int stride, int pad, double* out);

/// Output spatial extent for one axis, or a DimensionError if non-positive.
int conv_out_extent(int in, int kernel, int stride, int pad);

Tensor transpose2(const Tensor& x);

/// Lowers a [n, c, h, w] batch to one [c*kh*kw, n*oh*ow] matrix; sample s
/// occupies columns [s*oh*ow, (s+1)*oh*ow). Training and packed inference
/// share this lowering, which is what makes the two paths comparable
/// cell-for-cell.
Tensor lower_batch(const Tensor& x, int kh, int kw, int stride, int pad);

/// [out_c, n*p] columns back to a [n, out_c, oh, ow] batch.
Tensor raise_batch(const Tensor& z, std::int64_t n, int oh, int ow);

/// Adjoint of raise_batch: [n, out_c, oh, ow] gradient to [out_c, n*p].
Tensor lower_grad(const Tensor& g);

/// Adjoint of lower_batch: scatters column gradients onto image gradients.
Tensor raise_grad(const Tensor& gcols, std::int64_t n, int c, int h, int w, int kh, int kw,
                  int stride, int pad);

double mean(const Tensor& x);

/// Population standard deviation (divide by n, not n-1).
double std_pop(const Tensor& x);

double min_value(const Tensor& x);
double max_value(const Tensor& x);

}  // namespace irbnn

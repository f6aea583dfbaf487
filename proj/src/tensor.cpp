#include "irbnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace irbnn {

namespace {

std::int64_t checked_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + std::to_string(d));
    if (n > (std::int64_t{1} << 62) / d) throw DimensionError("tensor shape overflows element count");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<std::size_t>(checked_count(shape_)), 0.0);
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_count(shape_) != static_cast<std::int64_t>(data_.size()))
    throw DimensionError("shape " + shape_str(shape_) + " does not match data length " +
                         std::to_string(data_.size()));
}

Tensor Tensor::of(std::initializer_list<double> values) {
  return Tensor({static_cast<std::int64_t>(values.size())}, std::vector<double>(values));
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::reshaped(std::vector<std::int64_t> shape) const {
  if (checked_count(shape) != size())
    throw DimensionError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                         " changes element count");
  return Tensor(std::move(shape), data_);
}

std::uint64_t Rng::next_u64() {
  // splitmix64 finalizer over (seed, counter); pure function of both.
  std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ull * ++counter_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::next_uniform() {
  // 53 mantissa bits, offset half a step: strictly inside (0, 1).
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::next_normal() {
  const double u1 = next_uniform();
  const double u2 = next_uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
  if (n == 0) throw DomainError("next_below: n must be positive");
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

Tensor rand_normal(Rng& rng, std::vector<std::int64_t> shape, double mean, double stddev) {
  if (stddev < 0) throw DomainError("rand_normal: stddev must be non-negative");
  Tensor t(std::move(shape));
  double* p = t.data();
  const std::int64_t n = t.size();
  if (stddev == 0.0) {
    std::fill(p, p + n, mean);
    return t;
  }
  for (std::int64_t i = 0; i < n; ++i) p[i] = mean + stddev * rng.next_normal();
  return t;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul expects rank-2 tensors");
  Tensor c({a.dim(0), b.dim(1)});
  matmul_into(a, b, c.data());
  return c;
}

void matmul_into(const Tensor& a, const Tensor& b, double* out) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul expects rank-2 tensors");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul inner dimensions differ: " + std::to_string(a.dim(1)) + " vs " +
                         std::to_string(b.dim(0)));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const double* A = a.data();
  const double* B = b.data();
  std::fill(out, out + m * n, 0.0);
  // Tiled over j for locality; every C[i,j] still accumulates its k
  // contributions in ascending order, one rounding per step, which keeps
  // the result bit-identical to the naive triple loop.
  constexpr std::int64_t kJBlock = 4096;
  for (std::int64_t j0 = 0; j0 < n; j0 += kJBlock) {
    const std::int64_t j1 = std::min(n, j0 + kJBlock);
    for (std::int64_t i = 0; i < m; ++i) {
      double* crow = out + i * n;
      const double* arow = A + i * k;
      for (std::int64_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = B + p * n;
        for (std::int64_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

int conv_out_extent(int in, int kernel, int stride, int pad) {
  if (stride < 1) throw DimensionError("stride must be >= 1");
  if (pad < 0) throw DimensionError("pad must be >= 0");
  const int span = in + 2 * pad - kernel;
  if (span < 0)
    throw DimensionError("kernel " + std::to_string(kernel) + " exceeds padded extent " +
                         std::to_string(in + 2 * pad));
  return span / stride + 1;
}

Tensor im2col(const Tensor& input, int kh, int kw, int stride, int pad) {
  if (input.rank() != 3) throw DimensionError("im2col expects a [c,h,w] tensor");
  const int c = static_cast<int>(input.dim(0));
  const int h = static_cast<int>(input.dim(1));
  const int w = static_cast<int>(input.dim(2));
  const int oh = conv_out_extent(h, kh, stride, pad);
  const int ow = conv_out_extent(w, kw, stride, pad);
  Tensor out({static_cast<std::int64_t>(c) * kh * kw, static_cast<std::int64_t>(oh) * ow});
  im2col_into(input.data(), c, h, w, kh, kw, stride, pad, out.data(), out.dim(1));
  return out;
}

void im2col_into(const double* input, int c, int h, int w, int kh, int kw, int stride, int pad,
                 double* out, std::int64_t out_stride) {
  const int oh = conv_out_extent(h, kh, stride, pad);
  const int ow = conv_out_extent(w, kw, stride, pad);
  std::int64_t row = 0;
  for (int ci = 0; ci < c; ++ci) {
    const double* plane = input + static_cast<std::int64_t>(ci) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj, ++row) {
        double* dst = out + row * out_stride;
        std::int64_t col = 0;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < ow; ++ox) dst[col++] = 0.0;
            continue;
          }
          const double* src = plane + static_cast<std::int64_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kj - pad;
            dst[col++] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

Tensor col2im(const Tensor& cols, int c, int h, int w, int kh, int kw, int stride, int pad) {
  if (cols.rank() != 2) throw DimensionError("col2im expects a rank-2 tensor");
  const int oh = conv_out_extent(h, kh, stride, pad);
  const int ow = conv_out_extent(w, kw, stride, pad);
  if (cols.dim(0) != static_cast<std::int64_t>(c) * kh * kw ||
      cols.dim(1) != static_cast<std::int64_t>(oh) * ow)
    throw DimensionError("col2im shape mismatch");
  Tensor out({c, h, w});
  col2im_into(cols.data(), cols.dim(1), c, h, w, kh, kw, stride, pad, out.data());
  return out;
}

void col2im_into(const double* cols, std::int64_t cols_stride, int c, int h, int w, int kh, int kw,
                 int stride, int pad, double* out) {
  const int oh = conv_out_extent(h, kh, stride, pad);
  const int ow = conv_out_extent(w, kw, stride, pad);
  std::int64_t row = 0;
  for (int ci = 0; ci < c; ++ci) {
    double* plane = out + static_cast<std::int64_t>(ci) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj, ++row) {
        const double* src = cols + row * cols_stride;
        std::int64_t col = 0;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= h) {
            col += ow;
            continue;
          }
          double* dstrow = plane + static_cast<std::int64_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox, ++col) {
            const int ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < w) dstrow[ix] += src[col];
          }
        }
      }
    }
  }
}

double mean(const Tensor& x) {
  if (x.empty()) throw DimensionError("mean of empty tensor");
  double acc = 0.0;
  const double* p = x.data();
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) acc += p[i];
  return acc / static_cast<double>(n);
}

double std_pop(const Tensor& x) {
  if (x.empty()) throw DimensionError("std_pop of empty tensor");
  const double m = mean(x);
  double acc = 0.0;
  const double* p = x.data();
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = p[i] - m;
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(n));
}

double min_value(const Tensor& x) {
  if (x.empty()) throw DimensionError("min of empty tensor");
  return *std::min_element(x.storage().begin(), x.storage().end());
}

double max_value(const Tensor& x) {
  if (x.empty()) throw DimensionError("max of empty tensor");
  return *std::max_element(x.storage().begin(), x.storage().end());
}

Tensor transpose2(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects a rank-2 tensor");
  const std::int64_t r = x.dim(0), c = x.dim(1);
  Tensor out({c, r});
  const double* s = x.data();
  double* d = out.data();
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < c; ++j) d[j * r + i] = s[i * c + j];
  }
  return out;
}

Tensor lower_batch(const Tensor& x, int kh, int kw, int stride, int pad) {
  if (x.rank() != 4) throw DimensionError("lower_batch expects a [n, c, h, w] tensor");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = conv_out_extent(static_cast<int>(h), kh, stride, pad);
  const int ow = conv_out_extent(static_cast<int>(w), kw, stride, pad);
  const std::int64_t p = static_cast<std::int64_t>(oh) * ow;
  Tensor cols({c * kh * kw, n * p});
  for (std::int64_t s = 0; s < n; ++s) {
    im2col_into(x.data() + s * c * h * w, static_cast<int>(c), static_cast<int>(h),
                static_cast<int>(w), kh, kw, stride, pad, cols.data() + s * p, n * p);
  }
  return cols;
}

Tensor raise_batch(const Tensor& z, std::int64_t n, int oh, int ow) {
  const std::int64_t oc = z.dim(0), p = static_cast<std::int64_t>(oh) * ow;
  if (z.dim(1) != n * p) throw DimensionError("raise_batch: column count != n * oh * ow");
  Tensor out({n, oc, oh, ow});
  const double* s = z.data();
  double* d = out.data();
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t c = 0; c < oc; ++c) {
      std::memcpy(d + (b * oc + c) * p, s + c * n * p + b * p,
                  static_cast<std::size_t>(p) * sizeof(double));
    }
  }
  return out;
}

Tensor lower_grad(const Tensor& g) {
  if (g.rank() != 4) throw DimensionError("lower_grad expects a [n, c, oh, ow] tensor");
  const std::int64_t n = g.dim(0), oc = g.dim(1), p = g.dim(2) * g.dim(3);
  Tensor out({oc, n * p});
  const double* s = g.data();
  double* d = out.data();
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t c = 0; c < oc; ++c) {
      std::memcpy(d + c * n * p + b * p, s + (b * oc + c) * p,
                  static_cast<std::size_t>(p) * sizeof(double));
    }
  }
  return out;
}

Tensor raise_grad(const Tensor& gcols, std::int64_t n, int c, int h, int w, int kh, int kw,
                  int stride, int pad) {
  const int oh = conv_out_extent(h, kh, stride, pad);
  const int ow = conv_out_extent(w, kw, stride, pad);
  const std::int64_t p = static_cast<std::int64_t>(oh) * ow;
  Tensor out({n, c, h, w});
  for (std::int64_t s = 0; s < n; ++s) {
    col2im_into(gcols.data() + s * p, n * p, c, h, w, kh, kw, stride, pad,
                out.data() + s * c * h * w);
  }
  return out;
}

}  // namespace irbnn

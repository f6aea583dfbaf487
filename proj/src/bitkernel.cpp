#include "irbnn/bitkernel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <utility>

#include "irbnn/errors.hpp"

namespace irbnn {
namespace {

std::int64_t words_for(std::int64_t bits) { return (bits + 63) / 64; }

PackedBitTensor make_packed(std::int64_t rows, std::int64_t bits) {
  if (rows <= 0 || bits <= 0) {
    throw DimensionError("pack: rows and bit length must be positive");
  }
  PackedBitTensor p;
  p.rows = rows;
  p.bits_per_row = bits;
  p.words_per_row = words_for(bits);
  p.words.assign(static_cast<std::size_t>(rows * p.words_per_row), 0);
  return p;
}

void set_bit_from(PackedBitTensor& p, std::int64_t r, std::int64_t i, double v) {
  if (v == 1.0) {
    p.row(r)[i >> 6] |= std::uint64_t{1} << (i & 63);
  } else if (v != -1.0) {
    throw DomainError("pack: entries must be exactly +1 or -1");
  }
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

int popcount64(std::uint64_t x) {
#if defined(__GNUC__) || defined(__clang__)
  return __builtin_popcountll(x);
#else
  return popcount64_portable(x);
#endif
}

int popcount64_portable(std::uint64_t x) {
  x = x - ((x >> 1) & 0x5555555555555555ull);
  x = (x & 0x3333333333333333ull) + ((x >> 2) & 0x3333333333333333ull);
  x = (x + (x >> 4)) & 0x0f0f0f0f0f0f0f0full;
  return static_cast<int>((x * 0x0101010101010101ull) >> 56);
}

PackedBitTensor pack(const Tensor& x) {
  if (x.rank() == 2) {
    PackedBitTensor p = make_packed(x.dim(0), x.dim(1));
    const double* d = x.data();
    for (std::int64_t r = 0; r < p.rows; ++r) {
      for (std::int64_t i = 0; i < p.bits_per_row; ++i) {
        set_bit_from(p, r, i, d[r * p.bits_per_row + i]);
      }
    }
    return p;
  }
  PackedBitTensor p = make_packed(1, x.size());
  const double* d = x.data();
  for (std::int64_t i = 0; i < p.bits_per_row; ++i) set_bit_from(p, 0, i, d[i]);
  return p;
}

PackedBitTensor pack_columns(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("pack_columns: expected a rank-2 tensor");
  const std::int64_t k = x.dim(0), cols = x.dim(1);
  PackedBitTensor p = make_packed(cols, k);
  const double* d = x.data();
  for (std::int64_t i = 0; i < k; ++i) {
    const double* row = d + i * cols;
    for (std::int64_t j = 0; j < cols; ++j) set_bit_from(p, j, i, row[j]);
  }
  return p;
}

Tensor unpack(const PackedBitTensor& p) {
  Tensor out = p.rows == 1 ? Tensor({p.bits_per_row}) : Tensor({p.rows, p.bits_per_row});
  double* d = out.data();
  for (std::int64_t r = 0; r < p.rows; ++r) {
    const std::uint64_t* w = p.row(r);
    for (std::int64_t i = 0; i < p.bits_per_row; ++i) {
      d[r * p.bits_per_row + i] = (w[i >> 6] >> (i & 63)) & 1 ? 1.0 : -1.0;
    }
  }
  return out;
}

std::int64_t xnor_popcount_dot_rows(const PackedBitTensor& a, std::int64_t row_a,
                                    const PackedBitTensor& b, std::int64_t row_b) {
  if (a.bits_per_row != b.bits_per_row) {
    throw DimensionError("xnor_popcount_dot: row lengths differ");
  }
  const std::uint64_t* wa = a.row(row_a);
  const std::uint64_t* wb = b.row(row_b);
  const std::int64_t full = a.words_per_row - 1;
  std::int64_t pop = 0;
  for (std::int64_t w = 0; w < full; ++w) pop += popcount64(~(wa[w] ^ wb[w]));
  // Always mask the tail so stray padding bits cannot contribute.
  pop += popcount64(~(wa[full] ^ wb[full]) & a.tail_mask());
  return 2 * pop - a.bits_per_row;
}

std::int64_t xnor_popcount_dot(const PackedBitTensor& a, const PackedBitTensor& b) {
  if (a.rows != 1 || b.rows != 1) {
    throw DimensionError("xnor_popcount_dot: expected single-row operands");
  }
  return xnor_popcount_dot_rows(a, 0, b, 0);
}

Tensor packed_gemm(const PackedBitTensor& weights, const PackedBitTensor& act_columns,
                   const std::vector<int>& shifts) {
  if (weights.bits_per_row != act_columns.bits_per_row) {
    throw DimensionError("packed_gemm: inner dimensions differ");
  }
  if (static_cast<std::int64_t>(shifts.size()) != weights.rows) {
    throw DimensionError("packed_gemm: one shift per weight row required");
  }
  const std::int64_t m = weights.rows, p = act_columns.rows;
  const std::int64_t full = weights.words_per_row - 1;
  const std::uint64_t mask = weights.tail_mask();
  const std::int64_t n = weights.bits_per_row;
  Tensor out({m, p});
  double* od = out.data();
  for (std::int64_t i = 0; i < m; ++i) {
    const std::uint64_t* wi = weights.row(i);
    const int s = shifts[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < p; ++j) {
      const std::uint64_t* aj = act_columns.row(j);
      std::int64_t pop = 0;
      for (std::int64_t w = 0; w < full; ++w) pop += popcount64(~(wi[w] ^ aj[w]));
      pop += popcount64(~(wi[full] ^ aj[full]) & mask);
      const std::int64_t dot = 2 * pop - n;
      // Power-of-two scaling is exact; shift in integers when we can.
      od[i * p + j] = (s >= 0 && s < 32) ? static_cast<double>(dot << s)
                                         : std::ldexp(static_cast<double>(dot), s);
    }
  }
  return out;
}

Tensor packed_gemm_noscale(const PackedBitTensor& weights, const PackedBitTensor& act_columns) {
  return packed_gemm(weights, act_columns, std::vector<int>(weights.rows, 0));
}

std::vector<BenchCase> bench_suite(const std::string& suite, int reps, bool with_scaling) {
  struct Shape {
    std::string name;
    std::int64_t m, k, n;
  };
  std::vector<Shape> shapes;
  if (suite == "small") {
    shapes.push_back({"gemm8", 8, 8, 8});
    shapes.push_back({"gemm32", 32, 32, 32});
  } else if (suite == "gemm") {
    shapes.push_back({"gemm128", 128, 128, 128});
    shapes.push_back({"gemm256", 256, 256, 256});
    shapes.push_back({"gemm512", 512, 512, 512});
  } else if (suite == "conv") {
    shapes.push_back({"conv3x3_c64", 64, 576, 1024});
    shapes.push_back({"conv3x3_c128", 128, 1152, 256});
    shapes.push_back({"fc1024", 256, 1024, 64});
  } else {
    throw ConfigError("bench: unknown suite '" + suite + "' (expected small, gemm, or conv)");
  }
  if (reps < 1) throw ConfigError("bench: repetitions must be >= 1");

  std::vector<BenchCase> out;
  Rng rng(20240512);
  for (const Shape& sh : shapes) {
    Tensor wf({sh.m, sh.k});
    Tensor af({sh.k, sh.n});
    for (std::int64_t i = 0; i < wf.size(); ++i) {
      wf.data()[i] = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
    }
    for (std::int64_t i = 0; i < af.size(); ++i) {
      af.data()[i] = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
    }
    std::vector<int> shifts(static_cast<std::size_t>(sh.m));
    for (auto& s : shifts) {
      s = with_scaling ? static_cast<int>(rng.next_below(7)) - 6 : 0;
    }
    const PackedBitTensor wp = pack(wf);  // weights pack once, offline in real use

    using clock = std::chrono::steady_clock;
    std::vector<double> float_ms, packed_ms;
    double sink = 0;
    Tensor fout({sh.m, sh.n});
    for (int r = 0; r < reps; ++r) {
      auto t0 = clock::now();
      matmul_into(wf, af, fout.data());
      auto t1 = clock::now();
      sink += fout.data()[0];
      float_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    for (int r = 0; r < reps; ++r) {
      auto t0 = clock::now();
      // Activation packing happens per call; it is part of the cost.
      const PackedBitTensor ap = pack_columns(af);
      const Tensor pout = packed_gemm(wp, ap, shifts);
      auto t1 = clock::now();
      sink += pout.data()[0];
      packed_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    if (!std::isfinite(sink)) throw InternalError("bench: non-finite result");

    BenchCase c;
    c.name = sh.name;
    c.m = sh.m;
    c.k = sh.k;
    c.n = sh.n;
    c.repetitions = reps;
    c.float_ms_median = median_of(float_ms);
    c.float_ms_min = *std::min_element(float_ms.begin(), float_ms.end());
    c.float_ms_max = *std::max_element(float_ms.begin(), float_ms.end());
    c.packed_ms_median = median_of(packed_ms);
    c.packed_ms_min = *std::min_element(packed_ms.begin(), packed_ms.end());
    c.packed_ms_max = *std::max_element(packed_ms.begin(), packed_ms.end());
    c.speedup = c.packed_ms_median > 0 ? c.float_ms_median / c.packed_ms_median : 0;
    out.push_back(c);
  }
  return out;
}

std::string format_bench_table(const std::vector<BenchCase>& cases) {
  std::string s =
      "case            m     k     n   float ms   packed ms    speedup\n"
      "------------- ----- ----- ----- ---------- ----------- --------\n";
  char line[160];
  for (const BenchCase& c : cases) {
    std::snprintf(line, sizeof(line), "%-13s %5lld %5lld %5lld %10.3f %11.3f %7.2fx\n",
                  c.name.c_str(), static_cast<long long>(c.m), static_cast<long long>(c.k),
                  static_cast<long long>(c.n), c.float_ms_median, c.packed_ms_median, c.speedup);
    s += line;
  }
  return s;
}

}  // namespace irbnn

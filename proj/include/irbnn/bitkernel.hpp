#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irbnn/tensor.hpp"

namespace irbnn {

/// {-1,+1} data packed 64 values per word. Bit 1 encodes +1, bit 0 encodes
/// -1, LSB-first within each word, one padded word run per row. Padding
/// bits are kept zero on construction and masked out by every kernel, so
/// they can never leak into a result.
struct PackedBitTensor {
  std::int64_t rows = 0;
  std::int64_t bits_per_row = 0;  // logical length n of each row
  std::int64_t words_per_row = 0;
  std::vector<std::uint64_t> words;

  const std::uint64_t* row(std::int64_t r) const { return words.data() + r * words_per_row; }
  std::uint64_t* row(std::int64_t r) { return words.data() + r * words_per_row; }

  /// Mask selecting the valid bits of the last word of a row.
  std::uint64_t tail_mask() const {
    const int rem = static_cast<int>(bits_per_row & 63);
    return rem == 0 ? ~std::uint64_t{0} : ((std::uint64_t{1} << rem) - 1);
  }
};

int popcount64(std::uint64_t x);

/// Bit-twiddling fallback; must agree with popcount64 on every input.
int popcount64_portable(std::uint64_t x);

/// Packs a +-1 tensor. Rank-1 (or any rank but 2) packs as a single row of
/// size() bits; rank-2 packs one row per leading-dim slice. Entries other
/// than exactly +-1.0 are a domain error.
PackedBitTensor pack(const Tensor& x);

/// Packs the columns of a [k, p] matrix: row j of the result holds column j.
/// Dot products along k then run word-parallel.
PackedBitTensor pack_columns(const Tensor& x);

/// Inverse of pack: [n] for one row, [rows, n] otherwise. Exact roundtrip.
Tensor unpack(const PackedBitTensor& p);

/// Inner product of two +-1 rows: 2 * popcount(xnor) - n, exact integer.
std::int64_t xnor_popcount_dot(const PackedBitTensor& a, const PackedBitTensor& b);

std::int64_t xnor_popcount_dot_rows(const PackedBitTensor& a, std::int64_t row_a,
                                    const PackedBitTensor& b, std::int64_t row_b);

/// Binary GEMM: out[i, j] = dot(weights row i, activation column j) scaled
/// by 2^shifts[i]. `act_columns` holds one packed row per output column
/// (see pack_columns). Power-of-two scaling after integer accumulation is
/// lossless in doubles; s >= 0 takes an integer left-shift path.
Tensor packed_gemm(const PackedBitTensor& weights, const PackedBitTensor& act_columns,
                   const std::vector<int>& shifts);

/// Same, without any scaling (raw integer dots). Timing-comparison variant.
Tensor packed_gemm_noscale(const PackedBitTensor& weights, const PackedBitTensor& act_columns);

struct BenchCase {
  std::string name;
  std::int64_t m = 0, k = 0, n = 0;
  double float_ms_median = 0, float_ms_min = 0, float_ms_max = 0;
  double packed_ms_median = 0, packed_ms_min = 0, packed_ms_max = 0;
  double speedup = 0;
  int repetitions = 0;
};

/// Times the naive float GEMM against the packed XNOR-popcount path
/// (including per-call activation packing) at matched shapes, single
/// thread. Medians over `reps` repetitions. Suites: "small" (tiny,
/// overhead-dominated, no speedup expected), "gemm" (square 128/256/512),
/// "conv" (lowered conv shapes). `with_scaling` off skips the bit-shift
/// scaling in the packed path.
std::vector<BenchCase> bench_suite(const std::string& suite, int reps = 21,
                                   bool with_scaling = true);

std::string format_bench_table(const std::vector<BenchCase>& cases);

}  // namespace irbnn

#include "doctest.h"
#include "irbnn/errors.hpp"
#include "irbnn/tensor.hpp"

using namespace irbnn;

namespace {

// Ascending-k triple loop; matmul must match this bit for bit.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::int64_t p = 0; p < k; ++p) acc += a.at2(i, p) * b.at2(p, j);
      out.at2(i, j) = acc;
    }
  }
  return out;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul matches the ascending-k triple loop bit for bit") {
  Rng rng(11);
  const std::int64_t shapes[4][3] = {{3, 7, 5}, {1, 1, 1}, {8, 64, 8}, {5, 300, 2}};
  for (const auto& s : shapes) {
    Tensor a = rand_normal(rng, {s[0], s[1]}, 0.0, 1.0);
    Tensor b = rand_normal(rng, {s[1], s[2]}, 0.0, 1.0);
    CHECK(bit_equal(matmul(a, b), naive_matmul(a, b)));
  }
}

TEST_CASE("matmul column blocking does not change results") {
  // Wide enough to cross the internal column-block boundary.
  Rng rng(12);
  Tensor a = rand_normal(rng, {2, 3}, 0.0, 1.0);
  Tensor b = rand_normal(rng, {3, 5000}, 0.0, 1.0);
  CHECK(bit_equal(matmul(a, b), naive_matmul(a, b)));
}

TEST_CASE("matmul accumulation order is fixed even for ill-conditioned sums") {
  // 1e16 + 1 - 1e16 = 0 in left-to-right double arithmetic; any other
  // association gives 1. The kernel must reproduce the literal order.
  Tensor a({1, 3}, {1.0, 1.0, 1.0});
  Tensor b({3, 1}, {1e16, 1.0, -1e16});
  CHECK(matmul(a, b)[0] == 0.0);
}

TEST_CASE("matmul rejects mismatched shapes") {
  Tensor a({2, 3}), b({4, 2});
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("im2col lowers a 3x3 image with 2x2 patches") {
  Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor cols = im2col(x, 2, 2, 1, 0);
  REQUIRE(cols.shape() == std::vector<std::int64_t>{4, 4});
  const double want[4][4] = {
      {1, 2, 4, 5}, {2, 3, 5, 6}, {4, 5, 7, 8}, {5, 6, 8, 9}};
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(cols.at2(r, c) == want[r][c]);
  }
}

TEST_CASE("im2col zero-pads borders") {
  Tensor x({1, 2, 2}, {1, 2, 3, 4});
  Tensor cols = im2col(x, 2, 2, 1, 1);  // 3x3 output positions
  REQUIRE(cols.shape() == std::vector<std::int64_t>{4, 9});
  // First output position: the whole patch hangs off the top-left corner
  // except its bottom-right cell.
  CHECK(cols.at2(0, 0) == 0.0);
  CHECK(cols.at2(1, 0) == 0.0);
  CHECK(cols.at2(2, 0) == 0.0);
  CHECK(cols.at2(3, 0) == 1.0);
  // Center position sees the full image.
  CHECK(cols.at2(0, 4) == 1.0);
  CHECK(cols.at2(3, 4) == 4.0);
}

TEST_CASE("col2im is the adjoint of im2col") {
  // <im2col(x), g> == <x, col2im(g)> exactly when entries are small ints.
  Rng rng(13);
  const int c = 2, h = 5, w = 4, kh = 3, kw = 2, stride = 1, pad = 1;
  Tensor x({c, h, w}), g;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<double>(rng.next_below(7)) - 3.0;
  }
  Tensor cols = im2col(x, kh, kw, stride, pad);
  g = Tensor(cols.shape());
  for (std::int64_t i = 0; i < g.size(); ++i) {
    g[i] = static_cast<double>(rng.next_below(7)) - 3.0;
  }
  double lhs = 0;
  for (std::int64_t i = 0; i < cols.size(); ++i) lhs += cols[i] * g[i];
  Tensor back = col2im(g, c, h, w, kh, kw, stride, pad);
  double rhs = 0;
  for (std::int64_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
  CHECK(lhs == rhs);
}

TEST_CASE("conv_out_extent") {
  CHECK(conv_out_extent(28, 5, 1, 2) == 28);
  CHECK(conv_out_extent(32, 3, 2, 1) == 16);
  CHECK(conv_out_extent(3, 2, 1, 0) == 2);
}

TEST_CASE("population statistics") {
  Tensor x = Tensor::of({1, 2, 3});
  CHECK(mean(x) == 2.0);
  CHECK(std_pop(x) == doctest::Approx(0.816496580927726).epsilon(1e-15));
  CHECK(min_value(x) == 1.0);
  CHECK(max_value(x) == 3.0);
}

TEST_CASE("rng is a pure function of seed and counter") {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(99);
  for (int i = 0; i < 37; ++i) c.next_u64();
  Rng resumed(c.seed(), c.counter());
  for (int i = 0; i < 50; ++i) CHECK(c.next_u64() == resumed.next_u64());
}

TEST_CASE("rng uniform and bounded draws stay in range") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.next_uniform();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    CHECK(rng.next_below(7) < 7);
  }
}

TEST_CASE("transpose2 round-trips") {
  Rng rng(17);
  Tensor a = rand_normal(rng, {3, 5}, 0.0, 1.0);
  Tensor t = transpose2(a);
  REQUIRE(t.shape() == std::vector<std::int64_t>{5, 3});
  CHECK(t.at2(4, 2) == a.at2(2, 4));
  CHECK(bit_equal(transpose2(t), a));
}

TEST_CASE("lower_grad undoes raise_batch") {
  Rng rng(19);
  const std::int64_t n = 3;
  const int oc = 4, oh = 5, ow = 2;
  Tensor z = rand_normal(rng, {oc, n * oh * ow}, 0.0, 1.0);
  Tensor img = raise_batch(z, n, oh, ow);
  REQUIRE(img.shape() == std::vector<std::int64_t>{n, oc, oh, ow});
  CHECK(bit_equal(lower_grad(img), z));
}

TEST_CASE("lower_batch stacks per-sample im2col column blocks") {
  Rng rng(23);
  Tensor x = rand_normal(rng, {2, 3, 4, 4}, 0.0, 1.0);
  Tensor cols = lower_batch(x, 3, 3, 1, 1);
  REQUIRE(cols.shape() == std::vector<std::int64_t>{27, 2 * 16});
  // Sample 1's block equals im2col of sample 1 alone.
  Tensor x1({3, 4, 4});
  for (std::int64_t i = 0; i < x1.size(); ++i) x1[i] = x[x1.size() + i];
  Tensor solo = im2col(x1, 3, 3, 1, 1);
  for (std::int64_t r = 0; r < 27; ++r) {
    for (std::int64_t j = 0; j < 16; ++j) CHECK(cols.at2(r, 16 + j) == solo.at2(r, j));
  }
}

TEST_CASE("raise_grad is the adjoint of lower_batch") {
  Rng rng(29);
  const std::int64_t n = 2;
  const int c = 2, h = 4, w = 3, kh = 2, kw = 2, stride = 1, pad = 1;
  Tensor x({n, c, h, w});
  for (std::int64_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<double>(rng.next_below(5)) - 2.0;
  }
  Tensor cols = lower_batch(x, kh, kw, stride, pad);
  Tensor g(cols.shape());
  for (std::int64_t i = 0; i < g.size(); ++i) {
    g[i] = static_cast<double>(rng.next_below(5)) - 2.0;
  }
  double lhs = 0;
  for (std::int64_t i = 0; i < cols.size(); ++i) lhs += cols[i] * g[i];
  Tensor back = raise_grad(g, n, c, h, w, kh, kw, stride, pad);
  double rhs = 0;
  for (std::int64_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
  CHECK(lhs == rhs);
}

TEST_CASE("tensor helpers") {
  Tensor t = Tensor::full({2, 2}, 3.5);
  CHECK(t.size() == 4);
  CHECK(t[3] == 3.5);
  Tensor r = t.reshaped({4});
  CHECK(r.rank() == 1);
  CHECK_THROWS_AS(t.reshaped({3}), DimensionError);
  CHECK_THROWS_AS(Tensor({2}, {1.0}), DimensionError);
}

}  // TEST_SUITE

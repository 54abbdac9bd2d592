#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "prolora/errors.hpp"
#include "prolora/matrix.hpp"
#include "prolora/rng.hpp"

using namespace prolora;

namespace {

Matrix loop_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

// Reference roll written straight from the index definition: source j lands at (j + s) mod L.
Matrix loop_roll(const Matrix& x, long long s, Axis axis) {
  Matrix out(x.rows(), x.cols());
  const auto len = static_cast<long long>(x.extent(axis));
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const long long src = axis == Axis::rows ? static_cast<long long>(i) : static_cast<long long>(j);
      const auto dst = static_cast<std::size_t>(((src + s) % len + len) % len);
      if (axis == Axis::rows)
        out(dst, j) = x(i, j);
      else
        out(i, dst) = x(i, j);
    }
  return out;
}

Matrix random_matrix(Rng& rng, std::size_t max_dim = 8) {
  const auto r = static_cast<std::size_t>(rng.integer(1, static_cast<long long>(max_dim)));
  const auto c = static_cast<std::size_t>(rng.integer(1, static_cast<long long>(max_dim)));
  return random_uniform(r, c, -1.0, 1.0, rng);
}

}  // namespace

TEST_CASE("matmul basics") {
  const Matrix m{{1, 2}, {3, 4}};
  CHECK(matmul(Matrix::identity(2), m) == m);
  CHECK(matmul(Matrix{{1, 0}, {0, 0}}, Matrix{{5, 6}, {7, 8}}) == Matrix{{5, 6}, {0, 0}});

  Rng rng(11);
  const Matrix a = random_uniform(3, 4, -1, 1, rng);
  const Matrix b = random_uniform(4, 2, -1, 1, rng);
  CHECK(max_abs_diff(matmul(a, b), loop_matmul(a, b)) <= 1e-15);
}

TEST_CASE("matmul transposed forms agree with explicit transposes") {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    const Matrix a = random_uniform(rng.integer(1, 7), rng.integer(1, 7), -1, 1, rng);
    const Matrix b = random_uniform(a.rows(), rng.integer(1, 7), -1, 1, rng);
    CHECK(max_abs_diff(matmul_tn(a, b), loop_matmul(transpose(a), b)) <= 1e-14);
    const Matrix c = random_uniform(rng.integer(1, 7), a.cols(), -1, 1, rng);
    CHECK(max_abs_diff(matmul_nt(a, c), loop_matmul(a, transpose(c))) <= 1e-14);
  }
}

TEST_CASE("matmul rejects mismatched shapes and names both") {
  const Matrix a(2, 3), b(2, 3);
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul_tn(Matrix(2, 3), Matrix(3, 2)), ShapeError);
  CHECK_THROWS_AS(add(Matrix(2, 3), Matrix(3, 2)), ShapeError);
}

TEST_CASE("matmul associativity on random chains") {
  Rng rng(13);
  for (int t = 0; t < 100; ++t) {
    const auto n0 = rng.integer(1, 16), n1 = rng.integer(1, 16), n2 = rng.integer(1, 16),
               n3 = rng.integer(1, 16);
    const Matrix a = random_uniform(n0, n1, -1, 1, rng);
    const Matrix b = random_uniform(n1, n2, -1, 1, rng);
    const Matrix c = random_uniform(n2, n3, -1, 1, rng);
    CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <= 1e-12);
  }
}

TEST_CASE("concat and slice") {
  CHECK(concat_h(Matrix{{1}, {2}}, Matrix{{3}, {4}}) == Matrix{{1, 3}, {2, 4}});
  CHECK(concat_v(Matrix{{1, 2}}, Matrix{{3, 4}}) == Matrix{{1, 2}, {3, 4}});

  const Matrix x{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  CHECK(slice(x, {0, 1}, {0, 3}) == Matrix{{1, 2, 3}});
  CHECK(slice(x, {0, 3}, {0, 3}) == x);
  CHECK_THROWS_AS(slice(x, {0, 4}, {0, 3}), ShapeError);
  CHECK_THROWS_AS(slice(x, {2, 1}, {0, 3}), ShapeError);
  CHECK_THROWS_AS(concat_h(Matrix(2, 1), Matrix(3, 1)), ShapeError);
  CHECK_THROWS_AS(concat_v(Matrix(1, 2), Matrix(1, 3)), ShapeError);

  Rng rng(14);
  for (int t = 0; t < 100; ++t) {
    const Matrix a = random_matrix(rng);
    const Matrix z(a.rows(), static_cast<std::size_t>(rng.integer(0, 4)));
    CHECK(slice(concat_h(a, z), {0, a.rows()}, {0, a.cols()}) == a);
    const Matrix b = random_uniform(rng.integer(0, 5), a.cols(), -1, 1, rng);
    const Matrix v = concat_v(a, b);
    CHECK(slice(v, {0, a.rows()}, {0, a.cols()}) == a);
    CHECK(slice(v, {a.rows(), v.rows()}, {0, a.cols()}) == b);
  }
}

TEST_CASE("paste writes a block in place") {
  Matrix dst(3, 3);
  paste(dst, Matrix{{1, 2}, {3, 4}}, 1, 1);
  CHECK(dst == Matrix{{0, 0, 0}, {0, 1, 2}, {0, 3, 4}});
  CHECK_THROWS_AS(paste(dst, Matrix(2, 2), 2, 0), ShapeError);
}

TEST_CASE("roll") {
  const Matrix x{{1, 2}, {3, 4}, {5, 6}};
  CHECK(roll(x, 1, Axis::rows) == Matrix{{5, 6}, {1, 2}, {3, 4}});
  CHECK(roll(x, 1, Axis::cols) == Matrix{{2, 1}, {4, 3}, {6, 5}});

  Rng rng(15);
  for (int t = 0; t < 200; ++t) {
    const Matrix m = random_matrix(rng);
    const Axis axis = rng.integer(0, 1) ? Axis::rows : Axis::cols;
    const auto len = static_cast<long long>(m.extent(axis));
    const long long s1 = rng.integer(-20, 20), s2 = rng.integer(-20, 20);
    CHECK(roll(m, s1, axis) == loop_roll(m, s1, axis));
    CHECK(roll(m, len, axis) == m);
    CHECK(roll(roll(m, s1, axis), -s1, axis) == m);
    CHECK(roll(roll(m, s1, axis), s2, axis) == roll(m, s1 + s2, axis));
  }
  CHECK(roll(Matrix(0, 3), 2, Axis::rows) == Matrix(0, 3));
}

TEST_CASE("operations leave their inputs untouched") {
  Rng rng(16);
  const Matrix a = random_uniform(4, 5, -1, 1, rng);
  const Matrix b = random_uniform(5, 3, -1, 1, rng);
  const Matrix a0 = a, b0 = b;
  (void)matmul(a, b);
  (void)roll(a, 2, Axis::cols);
  (void)transpose(a);
  (void)scale(a, 3.0);
  (void)concat_v(a, a);
  CHECK(a == a0);
  CHECK(b == b0);
}

TEST_CASE("elementwise helpers") {
  const Matrix a{{1, -2}, {3, 4}};
  const Matrix b{{2, 2}, {-1, 0.5}};
  CHECK(add(a, b) == Matrix{{3, 0}, {2, 4.5}});
  CHECK(subtract(a, b) == Matrix{{-1, -4}, {4, 3.5}});
  CHECK(hadamard(a, b) == Matrix{{2, -4}, {-3, 2}});
  CHECK(scale(a, 2) == Matrix{{2, -4}, {6, 8}});
  CHECK(transpose(a) == Matrix{{1, 3}, {-2, 4}});
  CHECK(max_abs(a) == 4.0);
  CHECK(squared_norm(a) == 30.0);
  CHECK(all_finite(a));
  Matrix bad = a;
  bad(0, 1) = std::nan("");
  CHECK_FALSE(all_finite(bad));
}

TEST_CASE("splitmix64 reference vectors") {
  Rng zero(0);
  CHECK(zero.next_u64() == 0xE220A8397B1DCDAFULL);
  CHECK(zero.next_u64() == 0x6E789E6AA1B965F4ULL);
  CHECK(zero.next_u64() == 0x06C45D188009454FULL);

  Rng r(1234567);
  CHECK(r.next_u64() == 6457827717110365317ULL);
  CHECK(r.next_u64() == 3203168211198807973ULL);
  CHECK(r.next_u64() == 9817491932198370423ULL);
}

TEST_CASE("uniform draws") {
  Rng rng(7);
  double lo = 1.0, hi = -1.0;
  for (int i = 0; i < 1000000; ++i) {
    const double v = rng.uniform(-1.0, 1.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -1.0);
  CHECK(hi < 1.0);

  Rng mean_rng(8);
  double sum = 0.0;
  for (int i = 0; i < 1000000; ++i) sum += mean_rng.uniform(0.0, 1.0);
  CHECK(std::abs(sum / 1e6 - 0.5) <= 0.005);

  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform01() == b.uniform01());

  CHECK_THROWS_AS(rng.uniform(1.0, 1.0), ArgumentError);
  CHECK_THROWS_AS(rng.uniform(2.0, 1.0), ArgumentError);
}

TEST_CASE("uniform01 uses the top 53 bits") {
  Rng a(5), b(5);
  for (int i = 0; i < 20; ++i) {
    const std::uint64_t bits = a.next_u64() >> 11;
    CHECK(b.uniform01() == std::ldexp(static_cast<double>(bits), -53));
  }
}

TEST_CASE("normal draws have unit variance") {
  Rng rng(3);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    CHECK(std::isfinite(v));
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("integer draws stay in range") {
  Rng rng(4);
  std::vector<int> seen(5, 0);
  for (int i = 0; i < 5000; ++i) {
    const long long v = rng.integer(2, 6);
    REQUIRE(v >= 2);
    REQUIRE(v <= 6);
    ++seen[static_cast<std::size_t>(v - 2)];
  }
  for (int c : seen) CHECK(c > 800);
  CHECK_THROWS_AS(rng.integer(3, 2), ArgumentError);
}

#include "prolora/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "prolora/errors.hpp"

namespace prolora {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_mismatch(op, a, b);
}

std::size_t wrap(long long shift, std::size_t length) {
  const auto len = static_cast<long long>(length);
  long long r = shift % len;
  if (r < 0) r += len;
  return static_cast<std::size_t>(r);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& row : rows) {
    if (row.size() != cols_) throw ShapeError("Matrix: ragged initializer list");
    data_.insert(data_.end(), row.begin(), row.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) shape_mismatch("matmul", a, b);
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  const auto bd = b.data();
  auto cd = c.data();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* crow = cd.data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* brow = bd.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) shape_mismatch("matmul_tn", a, b);
  Matrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  auto cd = c.data();
  const auto bd = b.data();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* brow = bd.data() + k * n;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      double* crow = cd.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) shape_mismatch("matmul_nt", a, b);
  Matrix c(a.rows(), b.rows());
  const std::size_t inner = a.cols();
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = ad.data() + i * inner;
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = bd.data() + j * inner;
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += arow[k] * brow[k];
      c(i, j) = acc;
    }
  }
  return c;
}

Matrix concat_h(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) shape_mismatch("concat_h", a, b);
  Matrix c(a.rows(), a.cols() + b.cols());
  paste(c, a, 0, 0);
  paste(c, b, 0, a.cols());
  return c;
}

Matrix concat_v(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) shape_mismatch("concat_v", a, b);
  Matrix c(a.rows() + b.rows(), a.cols());
  paste(c, a, 0, 0);
  paste(c, b, a.rows(), 0);
  return c;
}

Matrix roll(const Matrix& x, long long shift, Axis axis) {
  const std::size_t length = x.extent(axis);
  if (length == 0 || x.empty()) return x;
  const std::size_t s = wrap(shift, length);
  if (s == 0) return x;
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (axis == Axis::rows) {
        out((i + s) % length, j) = x(i, j);
      } else {
        out(i, (j + s) % length) = x(i, j);
      }
    }
  }
  return out;
}

Matrix slice(const Matrix& x, Range rows, Range cols) {
  if (rows.begin > rows.end || cols.begin > cols.end || rows.end > x.rows() ||
      cols.end > x.cols()) {
    throw ShapeError("slice: range rows [" + std::to_string(rows.begin) + "," +
                     std::to_string(rows.end) + ") cols [" + std::to_string(cols.begin) + "," +
                     std::to_string(cols.end) + ") out of bounds for " + x.shape_string());
  }
  Matrix out(rows.length(), cols.length());
  for (std::size_t i = 0; i < rows.length(); ++i) {
    for (std::size_t j = 0; j < cols.length(); ++j) out(i, j) = x(rows.begin + i, cols.begin + j);
  }
  return out;
}

void paste(Matrix& dst, const Matrix& block, std::size_t row, std::size_t col) {
  if (row + block.rows() > dst.rows() || col + block.cols() > dst.cols()) {
    throw ShapeError("paste: block " + block.shape_string() + " at (" + std::to_string(row) +
                     "," + std::to_string(col) + ") exceeds " + dst.shape_string());
  }
  for (std::size_t i = 0; i < block.rows(); ++i) {
    for (std::size_t j = 0; j < block.cols(); ++j) dst(row + i, col + j) = block(i, j);
  }
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape("add", a, b);
  Matrix c = a;
  add_in_place(c, b);
  return c;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape("subtract", a, b);
  Matrix c = a;
  auto cd = c.data();
  const auto bd = b.data();
  for (std::size_t k = 0; k < cd.size(); ++k) cd[k] -= bd[k];
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape("hadamard", a, b);
  Matrix c = a;
  auto cd = c.data();
  const auto bd = b.data();
  for (std::size_t k = 0; k < cd.size(); ++k) cd[k] *= bd[k];
  return c;
}

Matrix scale(const Matrix& a, double factor) {
  Matrix c = a;
  for (double& v : c.data()) v *= factor;
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

void add_in_place(Matrix& dst, const Matrix& src) {
  require_same_shape("add_in_place", dst, src);
  auto dd = dst.data();
  const auto sd = src.data();
  for (std::size_t k = 0; k < dd.size(); ++k) dd[k] += sd[k];
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape("max_abs_diff", a, b);
  double worst = 0.0;
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t k = 0; k < ad.size(); ++k) worst = std::max(worst, std::abs(ad[k] - bd[k]));
  return worst;
}

double max_abs(const Matrix& a) {
  double worst = 0.0;
  for (double v : a.data()) worst = std::max(worst, std::abs(v));
  return worst;
}

double squared_norm(const Matrix& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v * v;
  return acc;
}

bool all_finite(const Matrix& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace prolora

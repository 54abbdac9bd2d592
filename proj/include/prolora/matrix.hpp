#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace prolora {

enum class Axis { rows, cols };

/// Dense row-major matrix of doubles. Element (i, j) lives at data()[i * cols() + j].
///
/// Zero-extent matrices are allowed: an adapter with no unshared rank stores a 0 x h block.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(Axis axis) const noexcept { return axis == Axis::rows ? rows_ : cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t length() const noexcept { return end - begin; }
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix concat_h(const Matrix& a, const Matrix& b);
Matrix concat_v(const Matrix& a, const Matrix& b);

/// Circular shift along `axis`: the slice at index j lands at (j + shift) mod L.
Matrix roll(const Matrix& x, long long shift, Axis axis);

Matrix slice(const Matrix& x, Range rows, Range cols);
/// Writes `block` into `dst` with its top-left corner at (row, col).
void paste(Matrix& dst, const Matrix& block, std::size_t row, std::size_t col);

Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double factor);
Matrix transpose(const Matrix& a);

void add_in_place(Matrix& dst, const Matrix& src);

double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs(const Matrix& a);
double squared_norm(const Matrix& a);
bool all_finite(const Matrix& a);

}  // namespace prolora

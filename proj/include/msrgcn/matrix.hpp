#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace msrgcn {

using Scalar = double;

/// Dense row-major matrix with an optional gradient buffer of the same shape.
///
/// Values are always finite: constructors that take caller data reject NaN and
/// Inf. The gradient buffer is absent until `ensure_grad()` is called.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Scalar fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<Scalar> data);
  Matrix(std::initializer_list<std::initializer_list<Scalar>> rows);

  static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }
  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Scalar& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  Scalar operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  std::span<Scalar> data() noexcept { return data_; }
  std::span<const Scalar> data() const noexcept { return data_; }

  bool has_grad() const noexcept { return !grad_.empty() || data_.empty(); }
  /// Allocates a zero gradient buffer if none exists.
  void ensure_grad();
  void zero_grad();
  void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }
  std::span<Scalar> grad();
  std::span<const Scalar> grad() const;

  /// Same data, new shape. rows*cols must equal size().
  Matrix reshaped(std::size_t rows, std::size_t cols) const;
  Matrix transposed() const;
  void fill(Scalar v);

  bool all_finite() const noexcept;
  std::string shape_string() const;

  /// Exact elementwise equality of shape and values; gradients ignored.
  friend bool operator==(const Matrix& a, const Matrix& b);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Scalar> data_;
  std::vector<Scalar> grad_;
};

std::string shape_of(std::size_t rows, std::size_t cols);

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, Scalar s);
Matrix tanh_map(const Matrix& x);

/// a += b, shapes must match.
void add_inplace(Matrix& a, const Matrix& b);

Scalar max_abs(const Matrix& a);

}  // namespace msrgcn

#include "msrgcn/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "msrgcn/errors.hpp"

namespace msrgcn {

namespace {

void require_finite(std::span<const Scalar> values) {
  for (Scalar v : values) {
    if (!std::isfinite(v)) throw DataError("matrix value is not finite");
  }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

}  // namespace

std::string shape_of(std::size_t rows, std::size_t cols) {
  return "(" + std::to_string(rows) + " x " + std::to_string(cols) + ")";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, Scalar fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (!std::isfinite(fill)) throw DataError("matrix fill value is not finite");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<Scalar> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_of(rows, cols));
  }
  require_finite(data_);
}

Matrix::Matrix(std::initializer_list<std::initializer_list<Scalar>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  require_finite(data_);
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
}

void Matrix::zero_grad() {
  ensure_grad();
  std::fill(grad_.begin(), grad_.end(), 0.0);
}

std::span<Scalar> Matrix::grad() {
  if (!has_grad()) throw UsageError("matrix " + shape_string() + " has no gradient buffer");
  return grad_;
}

std::span<const Scalar> Matrix::grad() const {
  if (!has_grad()) throw UsageError("matrix " + shape_string() + " has no gradient buffer");
  return grad_;
}

Matrix Matrix::reshaped(std::size_t rows, std::size_t cols) const {
  if (rows * cols != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string() + " to " + shape_of(rows, cols));
  }
  Matrix out;
  out.rows_ = rows;
  out.cols_ = cols;
  out.data_ = data_;
  return out;
}

Matrix Matrix::transposed() const {
  Matrix out(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
  return out;
}

void Matrix::fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
}

std::string Matrix::shape_string() const { return shape_of(rows_, cols_); }

bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " x " + b.shape_string());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Matrix out(m, n);
  const Scalar* pa = a.data().data();
  const Scalar* pb = b.data().data();
  Scalar* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    Scalar* row = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Scalar av = pa[i * k + p];
      if (av == 0.0) continue;
      const Scalar* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: " + a.shape_string() + "^T x " + b.shape_string());
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Matrix out(m, n);
  const Scalar* pa = a.data().data();
  const Scalar* pb = b.data().data();
  Scalar* po = out.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const Scalar* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Scalar av = pa[p * m + i];
      if (av == 0.0) continue;
      Scalar* row = po + i * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + a.shape_string() + " x " + b.shape_string() + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Matrix out(m, n);
  const Scalar* pa = a.data().data();
  const Scalar* pb = b.data().data();
  Scalar* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const Scalar* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const Scalar* brow = pb + j * k;
      Scalar acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      po[i * n + j] = acc;
    }
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out = a;
  add_inplace(out, b);
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Matrix scale(const Matrix& a, Scalar s) {
  Matrix out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

Matrix tanh_map(const Matrix& x) {
  Matrix out = x;
  for (auto& v : out.data()) v = std::tanh(v);
  return out;
}

void add_inplace(Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) da[i] += db[i];
}

Scalar max_abs(const Matrix& a) {
  Scalar m = 0.0;
  for (Scalar v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace msrgcn

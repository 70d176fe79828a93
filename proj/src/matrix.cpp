#include "ltfr/matrix.hpp"

#include <cmath>
#include <string>

#include "ltfr/error.hpp"

namespace ltfr {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

}  // namespace

Matrix::Matrix(size_t rows, size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("Matrix: value count " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::row_vector(std::initializer_list<double> xs) {
  return Matrix(1, xs.size(), std::vector<double>(xs));
}

Matrix Matrix::row_vector(const std::vector<double>& xs) { return Matrix(1, xs.size(), xs); }

Matrix Matrix::identity(size_t n) {
  Matrix m(n, n);
  for (size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::vector<double> Matrix::row(size_t r) const {
  return std::vector<double>(data_.begin() + r * cols_, data_.begin() + (r + 1) * cols_);
}

void Matrix::set_row(size_t r, const std::vector<double>& v) {
  if (v.size() != cols_) throw DimensionError("Matrix::set_row: wrong length");
  std::copy(v.begin(), v.end(), data_.begin() + r * cols_);
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix c(a.rows(), b.cols());
  for (size_t i = 0; i < a.rows(); ++i) {
    for (size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data() + k * b.cols();
      double* crow = c.data() + i * c.cols();
      for (size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
  }
  Matrix c(a.rows(), b.rows());
  for (size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.data() + i * a.cols();
    for (size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.data() + j * b.cols();
      double s = 0.0;
      for (size_t k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
      c(i, j) = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
  }
  Matrix c(a.cols(), b.cols());
  for (size_t k = 0; k < a.rows(); ++k) {
    const double* arow = a.data() + k * a.cols();
    const double* brow = b.data() + k * b.cols();
    for (size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = c.data() + i * c.cols();
      for (size_t j = 0; j < b.cols(); ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (size_t i = 0; i < a.rows(); ++i)
    for (size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  for (size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix c = a;
  for (size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix c = a;
  for (size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
  return c;
}

Matrix scaled(const Matrix& a, double s) {
  Matrix c = a;
  for (size_t i = 0; i < c.size(); ++i) c[i] *= s;
  return c;
}

void add_in_place(Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add_in_place");
  for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

void add_scaled_in_place(Matrix& a, const Matrix& b, double s) {
  require_same_shape(a, b, "add_scaled_in_place");
  for (size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

std::vector<double> l2_normalized(const std::vector<double>& a) {
  double n = l2_norm(a);
  if (!(n > 1e-300) || !std::isfinite(n)) {
    throw NonFiniteError("l2_normalized: zero or non-finite norm");
  }
  std::vector<double> out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] / n;
  return out;
}

}  // namespace ltfr

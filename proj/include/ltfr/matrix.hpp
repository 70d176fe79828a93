#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace ltfr {

// Dense row-major matrix of 64-bit floats. The whole toolkit trains in
// doubles; 32-bit floats only appear in the persisted embedding format.
class Matrix {
 public:
  Matrix() = default;
  Matrix(size_t rows, size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(size_t rows, size_t cols, std::vector<double> values);

  static Matrix row_vector(std::initializer_list<double> xs);
  static Matrix row_vector(const std::vector<double>& xs);
  static Matrix identity(size_t n);

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  std::vector<double> row(size_t r) const;
  void set_row(size_t r, const std::vector<double>& v);

  bool all_finite() const;
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<double> data_;
};

// Shape-checked kernels. All throw DimensionError on mismatch, with the
// offending shapes in the message.
Matrix matmul(const Matrix& a, const Matrix& b);    // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b); // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b); // a^T * b
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& a, double s);
void add_in_place(Matrix& a, const Matrix& b);
void add_scaled_in_place(Matrix& a, const Matrix& b, double s);

double dot(const std::vector<double>& a, const std::vector<double>& b);
double l2_norm(const std::vector<double>& a);
// Returns a / ||a||; throws NonFiniteError when the norm underflows.
std::vector<double> l2_normalized(const std::vector<double>& a);

}  // namespace ltfr

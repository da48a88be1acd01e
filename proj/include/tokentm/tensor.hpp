// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors and the handful of kernels a ViT forward pass,
// its reverse pass and the explainers need. Values are held as doubles;
// a real32 tensor rounds every stored element to float precision, so a
// real32 pipeline sees float storage with double accumulation.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tokentm {

enum class DType { kReal32, kReal64 };

const char* dtype_name(DType dtype);

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::kReal64);
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::kReal64);

  /// 2-D tensor from nested rows; every row must have the same length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::vector<double> values);
  static Tensor identity(std::size_t n);
  /// Square matrix with `diagonal` on the main diagonal.
  static Tensor diagonal(std::span<const double> diagonal);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  DType dtype() const { return dtype_; }

  std::span<const double> values() const { return values_; }
  std::span<double> mutable_values() { return values_; }

  double operator[](std::size_t flat) const { return values_[flat]; }
  double& operator[](std::size_t flat) { return values_[flat]; }
  double operator()(std::size_t row, std::size_t col) const;
  double& operator()(std::size_t row, std::size_t col);
  double operator()(std::size_t i, std::size_t j, std::size_t k) const;
  double& operator()(std::size_t i, std::size_t j, std::size_t k);

  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }
  std::span<const double> row(std::size_t r) const;
  std::span<double> mutable_row(std::size_t r);

  Tensor reshaped(Shape shape) const;
  /// Copy converted to `dtype`; converting to real32 rounds each element.
  Tensor as(DType dtype) const;

  /// Rounds stored values to the tensor's dtype and rejects NaN/Inf.
  /// Every kernel calls this on its result.
  void finalize(const char* op);

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
  DType dtype_ = DType::kReal64;
};

DType promote(DType a, DType b);

// Kernels. Every result is checked for finiteness (NumericError).

/// a[m×k] · b[k×p], fixed i-k-j accumulation order.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m×k] · bᵀ where b is [p×k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// aᵀ · b where a is [k×m] and b is [k×p].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Elementwise max(x, 0).
Tensor positive_part(const Tensor& a);

/// x[n×d] + v broadcast over rows; v has d entries.
Tensor add_row_vector(const Tensor& x, const Tensor& v);
/// Multiplies column j of x[n×d] by v[j].
Tensor scale_columns(const Tensor& x, std::span<const double> v);

/// Columns [begin, begin + count) of a matrix.
Tensor column_block(const Tensor& x, std::size_t begin, std::size_t count);
/// Rows [begin, begin + count) of a matrix.
Tensor row_block(const Tensor& x, std::size_t begin, std::size_t count);
/// Entries [begin, begin + count) of a vector.
Tensor slice_vector(const Tensor& v, std::size_t begin, std::size_t count);

/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

/// Exact erf-based GELU and its derivative.
double gelu(double x);
double gelu_derivative(double x);
Tensor gelu(const Tensor& x);

/// Euclidean norm of each row.
std::vector<double> row_norms(const Tensor& x);
double sum(const Tensor& x);
double max_abs(const Tensor& x);
double max_abs_difference(const Tensor& a, const Tensor& b);

}  // namespace tokentm

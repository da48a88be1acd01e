// SPDX-License-Identifier: Apache-2.0
#include "tokentm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "tokentm/error.hpp"

namespace tokentm {

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

template <typename Fn>
Tensor elementwise(const Tensor& a, const Tensor& b, const char* op, Fn fn) {
  require_same_shape(a, b, op);
  Tensor out(a.shape(), promote(a.dtype(), b.dtype()));
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i], b[i]);
  out.finalize(op);
  return out;
}

}  // namespace

const char* dtype_name(DType dtype) { return dtype == DType::kReal32 ? "F32" : "F64"; }

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

DType promote(DType a, DType b) {
  return (a == DType::kReal64 || b == DType::kReal64) ? DType::kReal64 : DType::kReal32;
}

Tensor::Tensor(Shape shape, DType dtype)
    : shape_(std::move(shape)), values_(shape_size(shape_), 0.0), dtype_(dtype) {}

Tensor::Tensor(Shape shape, std::vector<double> values, DType dtype)
    : shape_(std::move(shape)), values_(std::move(values)), dtype_(dtype) {
  if (values_.size() != shape_size(shape_)) {
    throw DimensionError("tensor: " + std::to_string(values_.size()) +
                         " values do not fill shape " + shape_to_string(shape_));
  }
  finalize("tensor");
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t d = n ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(n * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw DimensionError("from_rows: ragged rows");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor({n, d}, std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

Tensor Tensor::diagonal(std::span<const double> diagonal) {
  const std::size_t n = diagonal.size();
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) out(i, i) = diagonal[i];
  out.finalize("diagonal");
  return out;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(shape_));
  }
  return shape_[axis];
}

double Tensor::operator()(std::size_t row, std::size_t col) const {
  return values_[row * shape_[1] + col];
}

double& Tensor::operator()(std::size_t row, std::size_t col) {
  return values_[row * shape_[1] + col];
}

double Tensor::operator()(std::size_t i, std::size_t j, std::size_t k) const {
  return values_[(i * shape_[1] + j) * shape_[2] + k];
}

double& Tensor::operator()(std::size_t i, std::size_t j, std::size_t k) {
  return values_[(i * shape_[1] + j) * shape_[2] + k];
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t width = shape_[1];
  return std::span<const double>(values_).subspan(r * width, width);
}

std::span<double> Tensor::mutable_row(std::size_t r) {
  const std::size_t width = shape_[1];
  return std::span<double>(values_).subspan(r * width, width);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    throw DimensionError("reshape " + shape_to_string(shape_) + " -> " + shape_to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

Tensor Tensor::as(DType dtype) const {
  Tensor out = *this;
  out.dtype_ = dtype;
  out.finalize("as");
  return out;
}

void Tensor::finalize(const char* op) {
  if (dtype_ == DType::kReal32) {
    for (auto& v : values_) v = static_cast<double>(static_cast<float>(v));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value");
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " · " +
                         shape_to_string(b.shape()));
  }
  Tensor out({m, p}, promote(a.dtype(), b.dtype()));
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.mutable_row(i).data();
    const auto arow = a.row(i);
    for (std::size_t t = 0; t < k; ++t) {
      const double av = arow[t];
      const double* brow = bv + t * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
  out.finalize("matmul");
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), p = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_to_string(a.shape()) +
                         " · " + shape_to_string(b.shape()) + "ᵀ");
  }
  Tensor out({m, p}, promote(a.dtype(), b.dtype()));
  for (std::size_t i = 0; i < m; ++i) {
    const auto arow = a.row(i);
    for (std::size_t j = 0; j < p; ++j) {
      const auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
      out(i, j) = acc;
    }
  }
  out.finalize("matmul_nt");
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  const std::size_t k = a.rows(), m = a.cols(), p = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul_tn: inner dimensions differ " + shape_to_string(a.shape()) +
                         "ᵀ · " + shape_to_string(b.shape()));
  }
  Tensor out({m, p}, promote(a.dtype(), b.dtype()));
  for (std::size_t t = 0; t < k; ++t) {
    const auto arow = a.row(t);
    const auto brow = b.row(t);
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* orow = out.mutable_row(i).data();
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
  out.finalize("matmul_tn");
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor out({a.cols(), a.rows()}, a.dtype());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, "subtract", [](double x, double y) { return x - y; });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, "hadamard", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = a;
  for (auto& v : out.mutable_values()) v *= factor;
  out.finalize("scale");
  return out;
}

Tensor positive_part(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.mutable_values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor add_row_vector(const Tensor& x, const Tensor& v) {
  require_matrix(x, "add_row_vector");
  if (v.size() != x.cols()) {
    throw DimensionError("add_row_vector: vector of " + std::to_string(v.size()) +
                         " entries for rows of width " + std::to_string(x.cols()));
  }
  Tensor out(x.shape(), promote(x.dtype(), v.dtype()));
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xrow = x.row(i);
    auto orow = out.mutable_row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) orow[j] = xrow[j] + v[j];
  }
  out.finalize("add_row_vector");
  return out;
}

Tensor scale_columns(const Tensor& x, std::span<const double> v) {
  require_matrix(x, "scale_columns");
  if (v.size() != x.cols()) throw DimensionError("scale_columns: width mismatch");
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto orow = out.mutable_row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) orow[j] *= v[j];
  }
  out.finalize("scale_columns");
  return out;
}

Tensor column_block(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "column_block");
  if (begin + count > x.cols()) throw DimensionError("column_block: range past last column");
  Tensor out({x.rows(), count}, x.dtype());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xrow = x.row(i);
    std::copy_n(xrow.begin() + static_cast<std::ptrdiff_t>(begin), count,
                out.mutable_row(i).begin());
  }
  return out;
}

Tensor row_block(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "row_block");
  if (begin + count > x.rows()) throw DimensionError("row_block: range past last row");
  const auto first = x.values().begin() + static_cast<std::ptrdiff_t>(begin * x.cols());
  return Tensor({count, x.cols()}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * x.cols())),
                x.dtype());
}

Tensor slice_vector(const Tensor& v, std::size_t begin, std::size_t count) {
  if (v.rank() != 1 || begin + count > v.size()) throw DimensionError("slice_vector: bad range");
  const auto first = v.values().begin() + static_cast<std::ptrdiff_t>(begin);
  return Tensor({count}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count)),
                v.dtype());
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  Tensor out(x.shape(), x.dtype());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xrow = x.row(i);
    auto orow = out.mutable_row(i);
    const double peak = *std::max_element(xrow.begin(), xrow.end());
    double total = 0.0;
    for (std::size_t j = 0; j < xrow.size(); ++j) {
      orow[j] = std::exp(xrow[j] - peak);
      total += orow[j];
    }
    for (auto& v : orow) v /= total;
  }
  out.finalize("softmax_rows");
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix(x, "layernorm");
  const std::size_t d = x.cols();
  if (d == 0) throw DimensionError("layernorm: zero-width tokens");
  if (gamma.size() != d || beta.size() != d) throw DimensionError("layernorm: affine width mismatch");
  Tensor out(x.shape(), promote(x.dtype(), promote(gamma.dtype(), beta.dtype())));
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xrow = x.row(i);
    double mean = 0.0;
    for (double v : xrow) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xrow) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    auto orow = out.mutable_row(i);
    for (std::size_t j = 0; j < d; ++j) orow[j] = (xrow[j] - mean) * inv * gamma[j] + beta[j];
  }
  out.finalize("layernorm");
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.mutable_values()) v = gelu(v);
  out.finalize("gelu");
  return out;
}

std::vector<double> row_norms(const Tensor& x) {
  require_matrix(x, "row_norms");
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double acc = 0.0;
    for (double v : x.row(i)) acc += v * v;
    norms[i] = std::sqrt(acc);
  }
  return norms;
}

double sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return acc;
}

double max_abs(const Tensor& x) {
  double m = 0.0;
  for (double v : x.values()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_difference(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_difference");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace tokentm

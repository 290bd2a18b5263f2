#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rho/errors.hpp"

namespace rho {

/// Dense row-major array of doubles with an explicit shape.
///
/// Most of the library only uses rank 1 (bias vectors) and rank 2 (batches,
/// weight matrices), but the shape is kept general so a tensor can be
/// round-tripped without losing information.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (element_count(shape_) != values_.size()) {
      throw DimensionError("tensor: shape holds " + std::to_string(element_count(shape_)) + " elements but " +
                           std::to_string(values_.size()) + " values were given");
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("tensor: ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(values));
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : values_.size() / (shape_[0] == 0 ? 1 : shape_[0]); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  const double& operator[](std::size_t i) const { return values_[i]; }

  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double value) { std::fill(values_.begin(), values_.end(), value); }

  /// Rows `indices` of a rank-2 tensor, in the given order.
  Tensor gather_rows(std::span<const std::size_t> indices) const {
    const std::size_t c = cols();
    Tensor out({indices.size(), c});
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= rows()) throw DimensionError("tensor: row index out of range");
      std::copy_n(values_.data() + indices[i] * c, c, out.values_.data() + i * c);
    }
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  Shape shape_;
  std::vector<double> values_;
};

inline std::string shape_string(const Tensor::Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

/// a (m x k) * b (k x n). Each output row is accumulated in a fixed order, so
/// a row's result does not depend on which other rows share the batch.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* out_row = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double a_ip = a[i * k + p];
      if (a_ip == 0.0) continue;
      const double* b_row = &b[p * n];
      for (std::size_t j = 0; j < n; ++j) out_row[j] += a_ip * b_row[j];
    }
  }
  return out;
}

/// a^T * b where a is (m x k) and b is (m x n) -> (k x n).
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + shape_string(a.shape()) + "^T x " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::matrix(k, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* b_row = &b[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double a_ip = a[i * k + p];
      if (a_ip == 0.0) continue;
      double* out_row = &out[p * n];
      for (std::size_t j = 0; j < n; ++j) out_row[j] += a_ip * b_row[j];
    }
  }
  return out;
}

/// a (m x n) * b^T where b is (k x n) -> (m x k).
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  }
  const std::size_t m = a.rows(), n = a.cols(), k = b.rows();
  Tensor out = Tensor::matrix(m, k);
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = &a[i * n];
    for (std::size_t j = 0; j < k; ++j) {
      const double* b_row = &b[j * n];
      double acc = 0.0;
      for (std::size_t p = 0; p < n; ++p) acc += a_row[p] * b_row[p];
      out[i * k + j] = acc;
    }
  }
  return out;
}

/// Row-wise softmax of a rank-2 tensor with max subtraction.
inline Tensor softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = out.row(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  return out;
}

/// log(sum(exp(row))) with max subtraction.
/// log(sum(exp(row))) as max + log1p(rest), which keeps full precision when
/// one entry dominates.
inline double log_sum_exp(std::span<const double> row) {
  std::size_t top = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[top]) top = i;
  double rest = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i)
    if (i != top) rest += std::exp(row[i] - row[top]);
  return row[top] + std::log1p(rest);
}

/// Index of the largest entry; the lowest index wins ties.
inline std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

}  // namespace rho

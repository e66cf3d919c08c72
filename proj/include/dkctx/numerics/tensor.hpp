// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dkctx/util/error.hpp"

namespace dkctx {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major float64 tensor. Library code works with rank-2 tensors
/// (vectors are 1 x n rows); other ranks exist only for storage.
class Tensor {
 public:
  Tensor() : shape_{0, 0} {}
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }
  static Tensor identity(std::size_t n) {
    Tensor t = zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const {
    if (data_.size() != 1) throw ShapeError("item: tensor " + shape_str(shape_) + " is not a scalar");
    return data_[0];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  Tensor row_copy(std::size_t r) const {
    auto s = row_span(r);
    return Tensor::row({s.begin(), s.end()});
  }

  bool requires_grad = false;

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

namespace kernels {

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape " + shape_str(a.shape()) + " incompatible with " +
                     shape_str(b.shape()));
}

// C = A B
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: shape " + shape_str(a.shape()) + " incompatible with " + shape_str(b.shape()));
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor c = Tensor::zeros(n, m);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  double* cp = c.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bp + p * m;
      double* crow = cp + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// C = A B^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: shape " + shape_str(a.shape()) + " incompatible with " + shape_str(b.shape()));
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor c = Tensor::zeros(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.data().data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b.data().data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c(i, j) = s;
    }
  }
  return c;
}

// C = A^T B
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (a.rows() != b.rows())
    throw ShapeError("matmul_tn: shape " + shape_str(a.shape()) + " incompatible with " + shape_str(b.shape()));
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  Tensor c = Tensor::zeros(n, m);
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a.data().data() + p * n;
    const double* brow = b.data().data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c.data().data() + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// Row-wise softmax with max subtraction. Columns where mask is false get
// exactly zero probability; a row with no unmasked column is all zeros.
inline Tensor softmax_rows(const Tensor& x, const std::vector<bool>* col_mask = nullptr) {
  require_rank2(x, "softmax");
  if (col_mask && col_mask->size() != x.cols())
    throw ShapeError("softmax: mask length " + std::to_string(col_mask->size()) + " incompatible with " +
                     shape_str(x.shape()));
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < x.cols(); ++j)
      if (!col_mask || (*col_mask)[j]) mx = std::max(mx, x(i, j));
    if (mx == -INFINITY) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (col_mask && !(*col_mask)[j]) continue;
      const double e = std::exp(x(i, j) - mx);
      y(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) /= z;
  }
  return y;
}

inline Tensor map(const Tensor& x, const std::function<double(double)>& f) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

inline Tensor tanh(const Tensor& x) {
  return map(x, [](double v) { return std::tanh(v); });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b[i];
  return y;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor y = a;
  for (double& v : y.values()) v *= c;
  return y;
}

inline Tensor concat_cols(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t n = parts.front()->rows();
  std::size_t total = 0;
  for (const Tensor* p : parts) {
    require_rank2(*p, "concat");
    if (p->rows() != n)
      throw ShapeError("concat: shape " + shape_str(parts.front()->shape()) + " incompatible with " +
                       shape_str(p->shape()));
    total += p->cols();
  }
  Tensor y = Tensor::zeros(n, total);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (const Tensor* p : parts) {
      for (std::size_t j = 0; j < p->cols(); ++j) y(i, off + j) = (*p)(i, j);
      off += p->cols();
    }
  }
  return y;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) { return concat_cols({&a, &b}); }

inline double mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor " + shape_str(x.shape()));
  return std::accumulate(x.values().begin(), x.values().end(), 0.0) / static_cast<double>(x.size());
}

}  // namespace kernels

}  // namespace dkctx

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "deepstack/common.hpp"

namespace deepstack {

// Dense row-major tensor of doubles. Rank is 1 or 2 everywhere in this
// project; scalars are rank-1 tensors of size 1.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (std::size_t e : shape_) {
      if (e == 0) throw DimensionError("tensor extents must be positive");
      n *= e;
    }
    data_.assign(n, 0.0);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    std::size_t n = 1;
    for (std::size_t e : shape_) {
      if (e == 0) throw DimensionError("tensor extents must be positive");
      n *= e;
    }
    if (n != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_to_string(shape_));
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix initializer");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const { return shape_to_string(shape_); }

  static std::string shape_to_string(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) os << 'x';
      os << s[i];
    }
    os << ']';
    return os.str();
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

namespace detail {

// Unrolled dot product with a fixed reduction tree. The accumulation order
// never depends on optimization level, which keeps results bit-stable.
inline double dot(const double* a, const double* b, std::size_t n) {
  double a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0;
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    a0 += a[j] * b[j];
    a1 += a[j + 1] * b[j + 1];
    a2 += a[j + 2] * b[j + 2];
    a3 += a[j + 3] * b[j + 3];
    a4 += a[j + 4] * b[j + 4];
    a5 += a[j + 5] * b[j + 5];
    a6 += a[j + 6] * b[j + 6];
    a7 += a[j + 7] * b[j + 7];
  }
  double acc = ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7));
  for (; j < n; ++j) acc += a[j] * b[j];
  return acc;
}

}  // namespace detail

// Forward kernels shared by the eager evaluator and the tape. Each kernel
// validates shapes and guarantees a finite output.
namespace ops {

inline void ensure_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw ContractError(std::string(op) + ": produced a non-finite value");
  }
}

// [m x k] * [k x n] -> [m x n], or [m x k] * [k] -> [m].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) {
    throw DimensionError("matmul: left operand must be rank 2, got " + a.shape_string());
  }
  const std::size_t m = a.rows(), k = a.cols();
  if (b.rank() == 1) {
    if (b.size() != k) {
      throw DimensionError("matmul: inner extents disagree: " + a.shape_string() + " vs " +
                           b.shape_string());
    }
    Tensor c({m});
    for (std::size_t i = 0; i < m; ++i) c[i] = detail::dot(a.data() + i * k, b.data(), k);
    ensure_finite(c, "matmul");
    return c;
  }
  if (b.rank() != 2 || b.rows() != k) {
    throw DimensionError("matmul: inner extents disagree: " + a.shape_string() + " vs " +
                         b.shape_string());
  }
  const std::size_t n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* out = c.data() + i * n;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += av * brow[j];
    }
  }
  ensure_finite(c, "matmul");
  return c;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": operand shapes differ: " + a.shape_string() +
                         " vs " + b.shape_string());
  }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  ensure_finite(c, "add");
  return c;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  ensure_finite(c, "sub");
  return c;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
  ensure_finite(c, "mul");
  return c;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] /= b[i];
  ensure_finite(c, "div");
  return c;
}

inline Tensor tanh(const Tensor& x) {
  Tensor c = x;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::tanh(c[i]);
  return c;
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor c = x;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = 1.0 / (1.0 + std::exp(-c[i]));
  return c;
}

inline Tensor exp(const Tensor& x) {
  Tensor c = x;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::exp(c[i]);
  ensure_finite(c, "exp");
  return c;
}

// Max-subtracted softmax over a vector.
inline Tensor softmax(const Tensor& x) {
  if (x.rank() != 1 || x.size() == 0) {
    throw DimensionError("softmax: expected a non-empty vector, got " + x.shape_string());
  }
  Tensor y = x;
  double mx = *std::max_element(y.data(), y.data() + y.size());
  double z = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = std::exp(y[i] - mx);
    z += y[i];
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= z;
  return y;
}

// log softmax via the log-sum-exp shift.
inline Tensor log_softmax(const Tensor& x) {
  if (x.rank() != 1 || x.size() == 0) {
    throw DimensionError("log_softmax: expected a non-empty vector, got " + x.shape_string());
  }
  Tensor y = x;
  double mx = *std::max_element(y.data(), y.data() + y.size());
  double z = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) z += std::exp(y[i] - mx);
  double lse = mx + std::log(z);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= lse;
  return y;
}

inline Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat: empty part list");
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 1) {
      throw DimensionError("concat: parts must be vectors, got " + p.shape_string());
    }
    n += p.size();
  }
  Tensor c({n});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data(), p.data() + p.size(), c.data() + off);
    off += p.size();
  }
  return c;
}

inline Tensor slice(const Tensor& x, std::size_t start, std::size_t len) {
  if (x.rank() != 1 || start + len > x.size()) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for " +
                         x.shape_string());
  }
  Tensor c({len});
  std::copy(x.data() + start, x.data() + start + len, c.data());
  return c;
}

// Row i of a matrix, as a vector.
inline Tensor row(const Tensor& m, std::size_t i) {
  if (m.rank() != 2 || i >= m.rows()) {
    throw DimensionError("row: index " + std::to_string(i) + " out of range for " +
                         m.shape_string());
  }
  Tensor c({m.cols()});
  std::copy(m.data() + i * m.cols(), m.data() + (i + 1) * m.cols(), c.data());
  return c;
}

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
  Tensor c = Tensor::scalar(acc);
  ensure_finite(c, "sum");
  return c;
}

inline Tensor pick(const Tensor& x, std::size_t i) {
  if (x.rank() != 1 || i >= x.size()) {
    throw DimensionError("pick: index " + std::to_string(i) + " out of range for " +
                         x.shape_string());
  }
  return Tensor::scalar(x[i]);
}

inline Tensor scale(const Tensor& x, double c) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= c;
  ensure_finite(y, "scale");
  return y;
}

inline double euclidean_norm(const Tensor& x) {
  return std::sqrt(detail::dot(x.data(), x.data(), x.size()));
}

}  // namespace ops

// Eager evaluation context. Mirrors the Tape API so that layer and stacker
// code can be written once and run either recorded or plain.
struct EvalCtx {
  using value_type = Tensor;

  Tensor leaf(Tensor v) { return v; }
  const Tensor& val(const Tensor& t) const { return t; }

  Tensor matmul(const Tensor& a, const Tensor& b) { return ops::matmul(a, b); }
  Tensor add(const Tensor& a, const Tensor& b) { return ops::add(a, b); }
  Tensor sub(const Tensor& a, const Tensor& b) { return ops::sub(a, b); }
  Tensor mul(const Tensor& a, const Tensor& b) { return ops::mul(a, b); }
  Tensor div(const Tensor& a, const Tensor& b) { return ops::div(a, b); }
  Tensor tanh(const Tensor& x) { return ops::tanh(x); }
  Tensor sigmoid(const Tensor& x) { return ops::sigmoid(x); }
  Tensor exp(const Tensor& x) { return ops::exp(x); }
  Tensor softmax(const Tensor& x) { return ops::softmax(x); }
  Tensor log_softmax(const Tensor& x) { return ops::log_softmax(x); }
  Tensor concat(std::span<const Tensor> parts) { return ops::concat(parts); }
  Tensor concat2(const Tensor& a, const Tensor& b) {
    const Tensor parts[] = {a, b};
    return ops::concat(parts);
  }
  Tensor concat3(const Tensor& a, const Tensor& b, const Tensor& c) {
    const Tensor parts[] = {a, b, c};
    return ops::concat(parts);
  }
  Tensor slice(const Tensor& x, std::size_t start, std::size_t len) {
    return ops::slice(x, start, len);
  }
  Tensor row(const Tensor& m, std::size_t i) { return ops::row(m, i); }
  Tensor sum(const Tensor& x) { return ops::sum(x); }
  Tensor pick(const Tensor& x, std::size_t i) { return ops::pick(x, i); }
  Tensor scale(const Tensor& x, double c) { return ops::scale(x, c); }
};

}  // namespace deepstack

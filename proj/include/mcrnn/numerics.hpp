#pragma once

// Dense vectors and matrices (double by default) plus the handful of linear and
// elementwise kernels the recurrent layers need. Storage is row-major and every
// binary operation checks shapes; nothing broadcasts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <quadmath.h>

#include "mcrnn/errors.hpp"

namespace mcrnn {

// Elementary functions for every supported element type, including the
// quad-precision type used by the finite-difference oracle.
namespace scalar {

using quad = __float128;

template <typename T>
T tanh(T x) {
  if constexpr (std::is_same_v<T, quad>) return tanhq(x);
  else return std::tanh(x);
}
template <typename T>
T exp(T x) {
  if constexpr (std::is_same_v<T, quad>) return expq(x);
  else return std::exp(x);
}
template <typename T>
T log(T x) {
  if constexpr (std::is_same_v<T, quad>) return logq(x);
  else return std::log(x);
}
template <typename T>
bool isfinite(T x) {
  if constexpr (std::is_same_v<T, quad>) return finiteq(x) != 0;
  else return std::isfinite(x);
}

}  // namespace scalar

template <typename T>
class BasicVector {
 public:
  using value_type = T;

  BasicVector() = default;
  explicit BasicVector(std::size_t dim, T fill = T(0)) : data_(dim, fill) {}
  BasicVector(std::initializer_list<T> values) : data_(values) {}
  explicit BasicVector(std::vector<T> values) : data_(std::move(values)) {}

  std::size_t dim() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  T operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  BasicVector<U> cast() const {
    return BasicVector<U>(std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicVector&, const BasicVector&) = default;

 private:
  std::vector<T> data_;
};

template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer rows");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  BasicMatrix transposed() const {
    BasicMatrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  template <typename U>
  BasicMatrix<U> cast() const {
    BasicMatrix<U> m(rows_, cols_);
    std::copy(data_.begin(), data_.end(), m.values().begin());
    return m;
  }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Vector = BasicVector<double>;
using Matrix = BasicMatrix<double>;

// Scalar parameters take the element type of the tensor arguments.
template <typename T>
using scalar_of = std::type_identity_t<T>;

template <typename U, typename T>
std::vector<BasicVector<U>> cast_all(const std::vector<BasicVector<T>>& vs) {
  std::vector<BasicVector<U>> out;
  out.reserve(vs.size());
  for (const auto& v : vs) out.push_back(v.template cast<U>());
  return out;
}

template <typename U, typename T>
std::vector<BasicMatrix<U>> cast_all(const std::vector<BasicMatrix<T>>& ms) {
  std::vector<BasicMatrix<U>> out;
  out.reserve(ms.size());
  for (const auto& m : ms) out.push_back(m.template cast<U>());
  return out;
}

namespace detail {

template <typename T>
std::string shape_of(const BasicMatrix<T>& m) {
  std::ostringstream os;
  os << "matrix " << m.rows() << "x" << m.cols();
  return os.str();
}
template <typename T>
std::string shape_of(const BasicVector<T>& v) {
  std::ostringstream os;
  os << "vector dim " << v.dim();
  return os.str();
}

template <typename A, typename B>
[[noreturn]] void shape_mismatch(const char* op, const A& a, const B& b) {
  throw ShapeError(std::string(op) + ": " + shape_of(a) + " vs " + shape_of(b));
}

// Four independent accumulators keep the reduction order fixed while letting
// the compiler pipeline the multiply-adds.
template <typename T>
T dot_unrolled(const T* a, const T* b, std::size_t n) noexcept {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace detail

template <typename T>
T dot(const BasicVector<T>& a, const BasicVector<T>& b) {
  if (a.dim() != b.dim()) detail::shape_mismatch("dot", a, b);
  return detail::dot_unrolled(a.data(), b.data(), a.dim());
}

template <typename T>
BasicVector<T> matvec(const BasicMatrix<T>& m, const BasicVector<T>& v) {
  if (m.cols() != v.dim()) detail::shape_mismatch("matvec", m, v);
  BasicVector<T> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = detail::dot_unrolled(m.row(r).data(), v.data(), v.dim());
  return out;
}

// out += alpha * M v
template <typename T>
void matvec_acc(const BasicMatrix<T>& m, const BasicVector<T>& v, scalar_of<T> alpha, BasicVector<T>& out) {
  if (m.cols() != v.dim()) detail::shape_mismatch("matvec_acc", m, v);
  if (m.rows() != out.dim()) detail::shape_mismatch("matvec_acc", m, out);
  for (std::size_t r = 0; r < m.rows(); ++r)
    out[r] += alpha * detail::dot_unrolled(m.row(r).data(), v.data(), v.dim());
}

// out += alpha * Mᵀ v
template <typename T>
void matvec_transposed_acc(const BasicMatrix<T>& m, const BasicVector<T>& v, scalar_of<T> alpha,
                           BasicVector<T>& out) {
  if (m.rows() != v.dim()) detail::shape_mismatch("matvec_transposed_acc", m, v);
  if (m.cols() != out.dim()) detail::shape_mismatch("matvec_transposed_acc", m, out);
  T* o = out.data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const T g = alpha * v[r];
    if (g == T(0)) continue;
    const T* row = m.row(r).data();
    for (std::size_t c = 0; c < m.cols(); ++c) o[c] += g * row[c];
  }
}

template <typename T>
BasicVector<T> matvec_transposed(const BasicMatrix<T>& m, const BasicVector<T>& v) {
  BasicVector<T> out(m.cols());
  matvec_transposed_acc(m, v, T(1), out);
  return out;
}

// M += alpha * a bᵀ
template <typename T>
void outer_acc(BasicMatrix<T>& m, scalar_of<T> alpha, const BasicVector<T>& a, const BasicVector<T>& b) {
  if (m.rows() != a.dim()) detail::shape_mismatch("outer_acc", m, a);
  if (m.cols() != b.dim()) detail::shape_mismatch("outer_acc", m, b);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const T g = alpha * a[r];
    if (g == T(0)) continue;
    T* row = m.row(r).data();
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] += g * b[c];
  }
}

template <typename T>
BasicMatrix<T> outer(const BasicVector<T>& a, const BasicVector<T>& b) {
  BasicMatrix<T> m(a.dim(), b.dim());
  outer_acc(m, T(1), a, b);
  return m;
}

template <typename T>
BasicVector<T> axpy(scalar_of<T> alpha, const BasicVector<T>& x, const BasicVector<T>& y) {
  if (x.dim() != y.dim()) detail::shape_mismatch("axpy", x, y);
  BasicVector<T> out(y);
  for (std::size_t i = 0; i < x.dim(); ++i) out[i] += alpha * x[i];
  return out;
}

// y += alpha * x
template <typename T>
void axpy_inplace(scalar_of<T> alpha, const BasicVector<T>& x, BasicVector<T>& y) {
  if (x.dim() != y.dim()) detail::shape_mismatch("axpy_inplace", x, y);
  for (std::size_t i = 0; i < x.dim(); ++i) y[i] += alpha * x[i];
}

template <typename T>
BasicVector<T> concat(const BasicVector<T>& a, const BasicVector<T>& b) {
  BasicVector<T> out(a.dim() + b.dim());
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(), out.values().begin() + static_cast<long>(a.dim()));
  return out;
}

template <typename T>
BasicVector<T> hadamard(const BasicVector<T>& a, const BasicVector<T>& b) {
  if (a.dim() != b.dim()) detail::shape_mismatch("hadamard", a, b);
  BasicVector<T> out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
BasicVector<T> scaled(const BasicVector<T>& v, scalar_of<T> alpha) {
  BasicVector<T> out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = alpha * v[i];
  return out;
}

template <typename T>
BasicVector<T> tanh_vec(const BasicVector<T>& v) {
  BasicVector<T> out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = scalar::tanh(v[i]);
  return out;
}

template <typename T>
T sigmoid(T x) noexcept {
  if (x >= T(0)) return T(1) / (T(1) + scalar::exp(-x));
  const T e = scalar::exp(x);
  return e / (T(1) + e);
}

template <typename T>
BasicVector<T> sigmoid_vec(const BasicVector<T>& v) {
  BasicVector<T> out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = sigmoid(v[i]);
  return out;
}

template <typename T>
BasicVector<T> softmax(const BasicVector<T>& v) {
  if (v.empty()) throw ShapeError("softmax: empty vector");
  const T mx = *std::max_element(v.values().begin(), v.values().end());
  BasicVector<T> out(v.dim());
  T total = 0;
  for (std::size_t i = 0; i < v.dim(); ++i) {
    out[i] = scalar::exp(v[i] - mx);
    total += out[i];
  }
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] /= total;
  return out;
}

// log-sum-exp with max subtraction
template <typename T>
T log_sum_exp(const BasicVector<T>& v) {
  const T mx = *std::max_element(v.values().begin(), v.values().end());
  T total = 0;
  for (std::size_t i = 0; i < v.dim(); ++i) total += scalar::exp(v[i] - mx);
  return mx + scalar::log(total);
}

inline double squared_norm(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v * v;
  return s;
}

inline bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

// Seedable generator with platform-independent double conversion: the raw
// 64-bit Mersenne Twister stream is fully specified by the standard, so a
// seed reproduces the same parameters everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // [0, n)
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ArgumentError("Rng::below: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return r % n;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void fill_uniform(std::span<T> out, double bound) {
    for (T& v : out) v = static_cast<T>(uniform(-bound, bound));
  }

 private:
  std::mt19937_64 engine_;
};

// Deterministic seed derivation for sub-streams (lanes, epochs, workers).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace mcrnn

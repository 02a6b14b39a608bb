#pragma once

// Dense tensors, deterministic kernels and the splitmix64 generator shared by
// every other part of the toolkit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stp/errors.hpp"

namespace stp {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < s.size(); ++i) oss << (i ? "x" : "") << s[i];
  oss << ']';
  return oss.str();
}

// Row-major dense array of rank 1..3.
template <typename Real = double>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0)) : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > 3)
      throw ShapeError("tensor rank must be 1..3, got " + std::to_string(shape_.size()));
    data_.assign(count(shape_), fill);
  }

  Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty() || shape_.size() > 3)
      throw ShapeError("tensor rank must be 1..3, got " + std::to_string(shape_.size()));
    if (count(shape_) != data_.size())
      throw ShapeError("shape " + shape_str(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
  }

  // Nested-list construction for small literal matrices.
  static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<Real> d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      d.insert(d.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(d));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = Real(1);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }

  Real& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const Real& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  Real& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const Real& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Contiguous slice along the leading axis.
  std::span<Real> row(std::size_t i) {
    const std::size_t stride = data_.size() / shape_[0];
    return {data_.data() + i * stride, stride};
  }
  std::span<const Real> row(std::size_t i) const {
    const std::size_t stride = data_.size() / shape_[0];
    return {data_.data() + i * stride, stride};
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  // Throws NumericError naming `what` if any entry is NaN or infinite.
  const Tensor& require_finite(const char* what) const {
    if (!all_finite()) throw NumericError(std::string("non-finite value in ") + what);
    return *this;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> d(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(d));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  Shape shape_;
  std::vector<Real> data_;
};

template <typename Real>
double max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename Real>
Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
  Tensor<Real> c(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
  return c;
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a matrix");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<Real> t({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t(j, i) = a(i, j);
  return t;
}

namespace kernel {

// out[m x n] += a[m x k] * b[k x n]. Every output element is summed over k in
// ascending order; zero entries of `a` contribute nothing and are skipped,
// which keeps spike-driven products cheap without changing the result.
template <typename Real>
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const Real* a, const Real* b, Real* out) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* orow = out + i * n;
    const Real* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[k x n] += a^T * b with a[m x k], b[m x n]; summed over m ascending.
template <typename Real>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const Real* a, const Real* b, Real* out) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    const Real* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      Real* orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace kernel

// c[i][j] = sum_p a[i][p] * b[p][j], p ascending.
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<Real> c({a.dim(0), b.dim(1)});
  kernel::gemm_acc(a.dim(0), a.dim(1), b.dim(1), a.data(), b.data(), c.data());
  c.require_finite("matmul result");
  return c;
}

// splitmix64; bit-exact on every platform.
class Rng64 {
 public:
  explicit Rng64(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Top 53 bits reduced modulo k.
  std::uint64_t below(std::uint64_t k) {
    if (k == 0) throw Error("rng_below: k must be >= 1");
    return (next() >> 11) % k;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

  friend bool operator==(const Rng64&, const Rng64&) = default;

 private:
  std::uint64_t state_;
};

// Independent stream derived from a base seed and a stream label.
inline Rng64 substream(std::uint64_t seed, std::uint64_t stream) {
  Rng64 mix(seed ^ (stream * 0xD1B54A32D192ED03ULL));
  return Rng64(mix.next());
}

inline std::uint64_t rng_below(Rng64& r, std::uint64_t k) { return r.below(k); }

// Downward Fisher-Yates over [0, n).
inline std::vector<std::uint32_t> fisher_yates(Rng64& r, std::uint32_t n) {
  if (n == 0) throw Error("fisher_yates: n must be >= 1");
  std::vector<std::uint32_t> p(n);
  std::iota(p.begin(), p.end(), 0u);
  for (std::uint32_t i = n - 1; i >= 1; --i) {
    const auto j = static_cast<std::uint32_t>(r.below(std::uint64_t{i} + 1));
    std::swap(p[i], p[j]);
  }
  return p;
}

// k distinct indices from [0, n), ascending.
inline std::vector<std::uint32_t> choose_k(Rng64& r, std::uint32_t n, std::uint32_t k) {
  if (k > n) throw Error("choose_k: k > n");
  auto p = fisher_yates(r, n);
  p.resize(k);
  std::sort(p.begin(), p.end());
  return p;
}

}  // namespace stp

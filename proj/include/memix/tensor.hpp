#pragma once

// Dense row-major matrices of doubles and the handful of kernels the decoder,
// gate and routing code need. Every public operation returns finite values
// or throws NumericError.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "memix/errors.hpp"
#include "memix/prng.hpp"

namespace memix {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) : rows_(rows.size()) {
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  /// Entries drawn uniform in [lo, hi) in row-major order.
  static Matrix uniform(std::size_t rows, std::size_t cols, double lo, double hi, Prng& rng) {
    Matrix m(rows, cols);
    for (auto& v : m.data_) v = rng.uniform(lo, hi);
    return m;
  }

  static Matrix gaussian(std::size_t rows, std::size_t cols, Prng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (auto& v : m.data_) v = scale * rng.gaussian();
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t bytes() const noexcept { return data_.size() * sizeof(double); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  // Bitwise-style equality: same shape and every entry compares equal.
  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": shape " + a.shape_str() + " vs " + b.shape_str());
}

inline const Matrix& require_finite(const Matrix& m, const char* op) {
  for (double v : m.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite result");
  }
  return m;
}

inline double require_finite(double v, const char* op) {
  if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite result");
  return v;
}

}  // namespace detail

inline bool all_finite(const Matrix& m) noexcept {
  return std::all_of(m.data().begin(), m.data().end(), [](double v) { return std::isfinite(v); });
}

/// Plain triple loop in i-k-j order. Every entry still accumulates its
/// products in ascending k, so results do not depend on the loop order.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + a.shape_str() + " x " + b.shape_str());
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto br = b.row(k);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += aik * br[j];
    }
  }
  detail::require_finite(out, "matmul");
  return out;
}

/// a * b^T without materializing the transpose.
inline Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_transposed: " + a.shape_str() + " x " + b.shape_str() + "^T");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto br = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) acc += ar[k] * br[k];
      out(i, j) = acc;
    }
  }
  detail::require_finite(out, "matmul_transposed");
  return out;
}

// log of the smallest normal double.
inline constexpr double kSoftmaxFloor = -708.39641853226408;

inline Matrix softmax_rows(const Matrix& m) {
  detail::require_finite(m, "softmax_rows");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto in = m.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      // Weights that would be subnormal are flushed to 0. They are below
      // 2.3e-308 next to a row sum of at least 1, and subnormal arithmetic
      // is slow enough to make the cost of a step depend on the state norm.
      const double z = in[j] - mx;
      o[j] = z < kSoftmaxFloor ? 0.0 : std::exp(z);
      sum += o[j];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

inline Vector dot_rows(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "dot_rows");
  Vector out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    const auto br = b.row(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < ar.size(); ++k) acc += ar[k] * br[k];
    out[i] = detail::require_finite(acc, "dot_rows");
  }
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "hadamard");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  detail::require_finite(out, "hadamard");
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "add");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  detail::require_finite(out, "add");
  return out;
}

inline Matrix subtract(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "subtract");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  detail::require_finite(out, "subtract");
  return out;
}

/// Multiplies every entry of row i by g[i].
inline Matrix scale_rows(const Matrix& m, std::span<const double> g) {
  if (g.size() != m.rows()) {
    throw ShapeError("scale_rows: " + std::to_string(g.size()) + " scales for " + m.shape_str());
  }
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto in = m.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = g[i] * in[j];
  }
  detail::require_finite(out, "scale_rows");
  return out;
}

/// Rows scaled to unit L2 norm; all-zero rows stay zero.
inline Matrix l2_normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    double ss = 0.0;
    for (double v : r) ss += v * v;
    if (ss == 0.0) continue;
    const double inv = 1.0 / std::sqrt(ss);
    for (double& v : r) v *= inv;
  }
  detail::require_finite(out, "l2_normalize_rows");
  return out;
}

/// Logistic function evaluated without overflow for either sign.
inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double frobenius_norm(const Matrix& m) noexcept {
  double ss = 0.0;
  for (double v : m.data()) ss += v * v;
  return std::sqrt(ss);
}

/// max |a - b| over entries.
inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

/// max |a - b| divided by max(1, max |a|, max |b|).
inline double max_rel_diff(const Matrix& a, const Matrix& b) {
  double scale = 1.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  for (double v : b.data()) scale = std::max(scale, std::abs(v));
  return max_abs_diff(a, b) / scale;
}

// Column block [first, first + count) as its own matrix.
inline Matrix column_block(const Matrix& m, std::size_t first, std::size_t count) {
  if (first + count > m.cols()) throw ShapeError("column_block: out of range for " + m.shape_str());
  Matrix out(m.rows(), count);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::copy_n(m.row(i).begin() + static_cast<std::ptrdiff_t>(first), count, out.row(i).begin());
  }
  return out;
}

inline void set_column_block(Matrix& dst, std::size_t first, const Matrix& block) {
  if (block.rows() != dst.rows() || first + block.cols() > dst.cols()) {
    throw ShapeError("set_column_block: " + block.shape_str() + " into " + dst.shape_str());
  }
  for (std::size_t i = 0; i < dst.rows(); ++i) {
    std::copy(block.row(i).begin(), block.row(i).end(), dst.row(i).begin() + static_cast<std::ptrdiff_t>(first));
  }
}

}  // namespace memix

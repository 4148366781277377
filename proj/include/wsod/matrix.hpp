#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "wsod/error.hpp"

namespace wsod {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ShapeError("Matrix: data length does not match shape");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out(a.rows(), a.cols());
  for (std::size_t k = 0; k < a.size(); ++k) out.data()[k] = a.data()[k] * b.data()[k];
  return out;
}

inline std::vector<double> row_sums(const Matrix& m) {
  std::vector<double> s(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) s[r] += m(r, c);
  return s;
}

namespace detail {

// Max-subtracted softmax over n elements spaced `stride` apart. Both softmax
// orientations go through here so they agree bit for bit.
inline void softmax_strided(const double* in, double* out, std::size_t n, std::size_t stride) {
  if (n == 0) return;
  double mx = in[0];
  for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, in[k * stride]);
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    out[k * stride] = std::exp(in[k * stride] - mx);
    sum += out[k * stride];
  }
  for (std::size_t k = 0; k < n; ++k) out[k * stride] /= sum;
}

}  // namespace detail

/// Softmax down each column (classes x proposals input: normalise over classes).
inline Matrix softmax_over_classes(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t c = 0; c < x.cols(); ++c)
    detail::softmax_strided(x.data().data() + c, out.data().data() + c, x.rows(), x.cols());
  return out;
}

/// Softmax along each row (normalise over proposals).
inline Matrix softmax_over_proposals(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    detail::softmax_strided(x.data().data() + r * x.cols(), out.data().data() + r * x.cols(),
                            x.cols(), 1);
  return out;
}

inline double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Matrix sigmoid(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) out.data()[k] = sigmoid(x.data()[k]);
  return out;
}

/// Backward pass of softmax_over_classes: given probabilities p and dL/dp,
/// returns dL/dx.
inline Matrix softmax_over_classes_backward(const Matrix& p, const Matrix& grad_p) {
  require_same_shape(p, grad_p, "softmax_over_classes_backward");
  Matrix g(p.rows(), p.cols());
  for (std::size_t c = 0; c < p.cols(); ++c) {
    double dot = 0.0;
    for (std::size_t r = 0; r < p.rows(); ++r) dot += p(r, c) * grad_p(r, c);
    for (std::size_t r = 0; r < p.rows(); ++r) g(r, c) = p(r, c) * (grad_p(r, c) - dot);
  }
  return g;
}

inline Matrix softmax_over_proposals_backward(const Matrix& p, const Matrix& grad_p) {
  require_same_shape(p, grad_p, "softmax_over_proposals_backward");
  Matrix g(p.rows(), p.cols());
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < p.cols(); ++c) dot += p(r, c) * grad_p(r, c);
    for (std::size_t c = 0; c < p.cols(); ++c) g(r, c) = p(r, c) * (grad_p(r, c) - dot);
  }
  return g;
}

/// A scalar loss together with its gradient w.r.t. the scores it consumed.
struct LossValue {
  double value = 0.0;
  Matrix grad;
};

/// Probability clamp applied before every logarithm.
inline constexpr double kProbClamp = 1e-7;

}  // namespace wsod

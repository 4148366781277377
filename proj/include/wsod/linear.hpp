#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "wsod/error.hpp"
#include "wsod/matrix.hpp"

namespace wsod {

/// Fully connected layer y = x W + b, with SGD momentum buffers.
struct LinearHead {
  Matrix weights;  // in_dim x out_dim
  std::vector<double> bias;
  Matrix weights_momentum;
  std::vector<double> bias_momentum;

  LinearHead() = default;
  LinearHead(std::size_t in_dim, std::size_t out_dim)
      : weights(in_dim, out_dim),
        bias(out_dim, 0.0),
        weights_momentum(in_dim, out_dim),
        bias_momentum(out_dim, 0.0) {}

  std::size_t in_dim() const { return weights.rows(); }
  std::size_t out_dim() const { return weights.cols(); }

  template <typename Rng>
  static LinearHead random(std::size_t in_dim, std::size_t out_dim, double stddev, Rng& rng) {
    LinearHead h(in_dim, out_dim);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& w : h.weights.data()) w = dist(rng);
    return h;
  }

  friend bool operator==(const LinearHead&, const LinearHead&) = default;
};

struct LinearGrads {
  Matrix weights;
  std::vector<double> bias;

  LinearGrads() = default;
  explicit LinearGrads(const LinearHead& h) : weights(h.in_dim(), h.out_dim()), bias(h.out_dim(), 0.0) {}

  void add(const LinearGrads& o, double scale = 1.0) {
    require_same_shape(weights, o.weights, "LinearGrads::add");
    for (std::size_t k = 0; k < weights.size(); ++k) weights.data()[k] += scale * o.weights.data()[k];
    for (std::size_t k = 0; k < bias.size(); ++k) bias[k] += scale * o.bias[k];
  }
};

/// features (|R| x F) -> features * W + bias, shape |R| x out.
inline Matrix linear_forward(const LinearHead& head, const Matrix& features) {
  if (features.cols() != head.in_dim())
    throw ShapeError("linear_forward: feature dim " + std::to_string(features.cols()) +
                     " != head input dim " + std::to_string(head.in_dim()));
  const std::size_t n = features.rows(), f = head.in_dim(), o = head.out_dim();
  Matrix out(n, o);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < o; ++k) out(i, k) = head.bias[k];
    for (std::size_t j = 0; j < f; ++j) {
      const double x = features(i, j);
      if (x == 0.0) continue;
      const double* wrow = head.weights.data().data() + j * o;
      for (std::size_t k = 0; k < o; ++k) out(i, k) += x * wrow[k];
    }
  }
  return out;
}

/// Accumulates parameter gradients for dL/d(output) (|R| x out) into `grads`.
inline void linear_backward(const Matrix& features, const Matrix& grad_out, LinearGrads& grads) {
  if (features.rows() != grad_out.rows() || features.cols() != grads.weights.rows() ||
      grad_out.cols() != grads.weights.cols())
    throw ShapeError("linear_backward: shape mismatch");
  const std::size_t n = features.rows(), f = features.cols(), o = grad_out.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = grad_out.row(i);
    for (std::size_t k = 0; k < o; ++k) grads.bias[k] += g[k];
    for (std::size_t j = 0; j < f; ++j) {
      const double x = features(i, j);
      if (x == 0.0) continue;
      double* wrow = grads.weights.data().data() + j * o;
      for (std::size_t k = 0; k < o; ++k) wrow[k] += x * g[k];
    }
  }
}

struct SgdParams {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// buffer <- momentum * buffer + grad + weight_decay * param; param <- param - lr * buffer.
/// Weight decay is applied to the bias too.
inline void sgd_step(LinearHead& head, const LinearGrads& grads, const SgdParams& p) {
  require_same_shape(head.weights, grads.weights, "sgd_step");
  if (grads.bias.size() != head.bias.size()) throw ShapeError("sgd_step: bias length mismatch");
  auto update = [&](double& param, double& buf, double g) {
    buf = p.momentum * buf + g + p.weight_decay * param;
    param -= p.lr * buf;
  };
  for (std::size_t k = 0; k < head.weights.size(); ++k)
    update(head.weights.data()[k], head.weights_momentum.data()[k], grads.weights.data()[k]);
  for (std::size_t k = 0; k < head.bias.size(); ++k)
    update(head.bias[k], head.bias_momentum[k], grads.bias[k]);
}

// Checkpoint layout, all little-endian:
//   u64 in_dim, u64 out_dim, in_dim*out_dim f64 weights (row-major), out_dim f64 bias.
namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((v >> (8 * k)) & 0xff);
  os.write(b, 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw Error("checkpoint: unexpected end of stream");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return v;
}

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

}  // namespace detail

inline void write_head(std::ostream& os, const LinearHead& h) {
  detail::write_u64(os, h.in_dim());
  detail::write_u64(os, h.out_dim());
  for (double w : h.weights.data()) detail::write_f64(os, w);
  for (double b : h.bias) detail::write_f64(os, b);
}

inline LinearHead read_head(std::istream& is) {
  const auto in = detail::read_u64(is);
  const auto out = detail::read_u64(is);
  if (in > (1u << 20) || out > (1u << 20)) throw Error("checkpoint: implausible head dimensions");
  LinearHead h(in, out);
  for (double& w : h.weights.data()) w = detail::read_f64(is);
  for (double& b : h.bias) b = detail::read_f64(is);
  return h;
}

}  // namespace wsod

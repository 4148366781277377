#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "wsod/error.hpp"
#include "wsod/matrix.hpp"

namespace wsod {

/// Image-level labels: labels[c] is 1 when class c is present, else 0.
using Labels = std::vector<int>;

inline int count_present(const Labels& y) { return static_cast<int>(std::count(y.begin(), y.end(), 1)); }

/// Two-stream MIDN output. All matrices are classes x proposals.
struct MidnScores {
  Matrix cls_prob;  // softmax over classes of x_cls
  Matrix det_prob;  // softmax over proposals of x_det
  Matrix x_box;     // cls_prob (.) det_prob
  std::vector<double> x_img;
};

inline MidnScores midn_forward(const Matrix& x_cls, const Matrix& x_det) {
  require_same_shape(x_cls, x_det, "midn_forward");
  MidnScores s;
  s.cls_prob = softmax_over_classes(x_cls);
  s.det_prob = softmax_over_proposals(x_det);
  s.x_box = hadamard(s.cls_prob, s.det_prob);
  s.x_img = row_sums(s.x_box);
  return s;
}

/// Weighted image-level binary cross-entropy. The gradient is w.r.t. x_img,
/// stored as a C x 1 matrix. Clamped entries contribute zero gradient.
inline LossValue midn_loss(const std::vector<double>& x_img, const Labels& y,
                           const std::vector<double>& class_weights) {
  if (x_img.size() != y.size() || x_img.size() != class_weights.size())
    throw ShapeError("midn_loss: x_img, labels and weights differ in length");
  LossValue out{0.0, Matrix(x_img.size(), 1)};
  for (std::size_t c = 0; c < x_img.size(); ++c) {
    const double raw = x_img[c];
    const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    const bool clamped = p != raw;
    const double w = class_weights[c];
    if (y[c] == 1) {
      out.value -= w * std::log(p);
      if (!clamped) out.grad(c, 0) = -w / p;
    } else {
      out.value -= w * std::log(1.0 - p);
      if (!clamped) out.grad(c, 0) = w / (1.0 - p);
    }
  }
  return out;
}

inline LossValue midn_loss(const std::vector<double>& x_img, const Labels& y) {
  return midn_loss(x_img, y, std::vector<double>(y.size(), 1.0));
}

struct MidnGrads {
  Matrix x_cls;
  Matrix x_det;
};

/// Backpropagates dL/dx_img through aggregation, the product and both softmaxes.
inline MidnGrads midn_backward(const MidnScores& s, const Matrix& grad_img) {
  const std::size_t C = s.x_box.rows(), R = s.x_box.cols();
  if (grad_img.rows() != C || grad_img.cols() != 1) throw ShapeError("midn_backward: gradient shape");
  Matrix g_cls(C, R), g_det(C, R);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < R; ++i) {
      g_cls(c, i) = grad_img(c, 0) * s.det_prob(c, i);
      g_det(c, i) = grad_img(c, 0) * s.cls_prob(c, i);
    }
  return {softmax_over_classes_backward(s.cls_prob, g_cls),
          softmax_over_proposals_backward(s.det_prob, g_det)};
}

struct MctOptions {
  int tolerance_ranks = 1;  // T_n
  double weight = 0.4;      // a
  /// Closed intervals [N_p, N_p + T_n] and [0, N_p] instead of half-open ones.
  bool inclusive = false;
  /// Down-weight absent top-ranked classes only when some present class fell
  /// into the tolerance window.
  bool gated = true;
};

/// Misclassification-tolerance class weights for the MIDN loss. Classes are
/// ranked by x_img descending (ties by class index). Present classes ranked in
/// [N_p, N_p + T_n) and absent classes ranked in [0, N_p) get weight `a`.
inline std::vector<double> mct_weights(const std::vector<double>& x_img, const Labels& y,
                                       const MctOptions& opt = {}) {
  if (x_img.size() != y.size()) throw ShapeError("mct_weights: x_img and labels differ in length");
  const int np = count_present(y);
  if (np < 1) throw Error("mct_weights: no present class");
  const std::size_t C = x_img.size();
  std::vector<std::size_t> order(C);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x_img[a] > x_img[b]; });
  std::vector<int> rank(C);
  for (std::size_t r = 0; r < C; ++r) rank[order[r]] = static_cast<int>(r);

  const int hi_present = np + opt.tolerance_ranks + (opt.inclusive ? 1 : 0);
  const int hi_absent = np + (opt.inclusive ? 1 : 0);

  std::vector<double> w(C, 1.0);
  bool triggered = false;
  for (std::size_t c = 0; c < C; ++c)
    if (y[c] == 1 && rank[c] >= np && rank[c] < hi_present) {
      w[c] = opt.weight;
      triggered = true;
    }
  if (triggered || !opt.gated)
    for (std::size_t c = 0; c < C; ++c)
      if (y[c] == 0 && rank[c] < hi_absent) w[c] = opt.weight;
  return w;
}

}  // namespace wsod

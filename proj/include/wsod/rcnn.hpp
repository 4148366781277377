#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include <spdlog/spdlog.h>

#include "wsod/box.hpp"
#include "wsod/error.hpp"
#include "wsod/matrix.hpp"
#include "wsod/sce.hpp"

namespace wsod {

using BoxDelta = std::array<double, 4>;  // dx, dy, dw, dh

/// Upper clamp on dw/dh before exponentiation.
inline const double kMaxLogScale = std::log(1000.0 / 16.0);

/// Centre/log-size parameterisation of `target` relative to `proposal`.
inline BoxDelta encode_delta(const Box& proposal, const Box& target) {
  const double pw = proposal.width(), ph = proposal.height();
  return {(target.cx() - proposal.cx()) / pw, (target.cy() - proposal.cy()) / ph, std::log(target.width() / pw),
          std::log(target.height() / ph)};
}

/// Inverse of encode_delta. dw/dh are clamped to kMaxLogScale; no clipping.
inline Box decode_delta(const Box& proposal, const BoxDelta& d) {
  const double pw = proposal.width(), ph = proposal.height();
  const double cx = proposal.cx() + d[0] * pw;
  const double cy = proposal.cy() + d[1] * ph;
  const double w = pw * std::exp(std::min(d[2], kMaxLogScale));
  const double h = ph * std::exp(std::min(d[3], kMaxLogScale));
  return from_center(cx, cy, w, h);
}

struct RcnnTargets {
  std::vector<int> labels;  // 0..C-1 foreground, C background
  std::vector<double> weights;
  std::vector<BoxDelta> deltas;
  std::vector<char> has_delta;
  int background = 0;

  std::size_t foreground_count() const {
    return static_cast<std::size_t>(std::count(has_delta.begin(), has_delta.end(), 1));
  }
};

/// Classification targets as for the MCC branches plus regression targets
/// for foreground proposals. Degenerate foreground proposals are left
/// without a regression target.
inline RcnnTargets assign_rcnn_targets(std::span<const Box> boxes, const SeedSet& seeds, std::size_t num_classes,
                                       const MccAssignParams& p = {}) {
  const auto mcc = assign_mcc_targets(boxes, seeds, num_classes, p);
  const auto assign = assign_to_seeds(boxes, seeds);
  RcnnTargets t;
  t.labels = mcc.labels;
  t.weights = mcc.weights;
  t.background = mcc.background;
  t.deltas.assign(boxes.size(), BoxDelta{0, 0, 0, 0});
  t.has_delta.assign(boxes.size(), 0);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (t.labels[i] == t.background) continue;
    if (boxes[i].width() <= 0.0 || boxes[i].height() <= 0.0) {
      spdlog::warn("assign_rcnn_targets: degenerate foreground proposal {} excluded from regression", i);
      continue;
    }
    t.deltas[i] = encode_delta(boxes[i], seeds[assign[i].seed_index].box);
    t.has_delta[i] = 1;
  }
  return t;
}

inline double smooth_l1(double u) { return std::abs(u) < 1.0 ? 0.5 * u * u : std::abs(u) - 0.5; }
inline double smooth_l1_grad(double u) { return std::abs(u) < 1.0 ? u : (u > 0.0 ? 1.0 : -1.0); }

struct RcnnLoss {
  double value = 0.0;
  double cls_value = 0.0;
  double reg_value = 0.0;
  Matrix grad_cls;  // w.r.t. classification logits, (C+1) x |R|
  Matrix grad_reg;  // w.r.t. regression outputs, same shape as the input deltas
};

/// Row of the regression output used for proposal i: class-agnostic heads
/// have 4 rows, per-class heads 4C rows.
inline std::size_t regression_row(std::size_t reg_rows, int cls) {
  return reg_rows == 4 ? 0 : 4 * static_cast<std::size_t>(cls);
}

/// Weighted cross-entropy (as in mcc_loss) plus weighted smooth-L1 over
/// foreground proposals, the latter averaged over the foreground count.
/// `reg` is 4 x |R| (class-agnostic) or 4C x |R| (per class).
inline RcnnLoss rcnn_loss(const Matrix& cls_prob, const Matrix& reg, const RcnnTargets& t) {
  const std::size_t R = cls_prob.cols();
  if (reg.cols() != R || t.labels.size() != R) throw ShapeError("rcnn_loss: proposal count mismatch");
  const std::size_t C = cls_prob.rows() - 1;
  if (reg.rows() != 4 && reg.rows() != 4 * C) throw ShapeError("rcnn_loss: regression rows must be 4 or 4C");

  RcnnLoss out;
  auto ce = mcc_loss(cls_prob, t.labels, t.weights);
  out.cls_value = ce.value;
  out.grad_cls = std::move(ce.grad);
  out.grad_reg = Matrix(reg.rows(), reg.cols());

  const std::size_t fg = t.foreground_count();
  if (fg > 0) {
    const double inv = 1.0 / static_cast<double>(fg);
    for (std::size_t i = 0; i < R; ++i) {
      if (!t.has_delta[i]) continue;
      const std::size_t r0 = regression_row(reg.rows(), t.labels[i]);
      for (std::size_t k = 0; k < 4; ++k) {
        const double u = reg(r0 + k, i) - t.deltas[i][k];
        out.reg_value += inv * t.weights[i] * smooth_l1(u);
        out.grad_reg(r0 + k, i) = inv * t.weights[i] * smooth_l1_grad(u);
      }
    }
  }
  out.value = out.cls_value + out.reg_value;
  return out;
}

/// Decodes one delta per box and clips to `bounds`. `deltas` is 4 x |R| or
/// 4C x |R|; `classes[i]` picks the row block for per-class regression.
inline std::vector<Box> apply_regression(std::span<const Box> boxes, const Matrix& deltas,
                                         std::span<const int> classes, const Box& bounds) {
  if (deltas.cols() != boxes.size() || classes.size() != boxes.size())
    throw ShapeError("apply_regression: length mismatch");
  std::vector<Box> out;
  out.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const std::size_t r0 = regression_row(deltas.rows(), classes[i]);
    const BoxDelta d{deltas(r0, i), deltas(r0 + 1, i), deltas(r0 + 2, i), deltas(r0 + 3, i)};
    out.push_back(clip(decode_delta(boxes[i], d), bounds));
  }
  return out;
}

}  // namespace wsod

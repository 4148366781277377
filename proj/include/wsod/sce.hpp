#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "wsod/box.hpp"
#include "wsod/error.hpp"
#include "wsod/linear.hpp"
#include "wsod/matrix.hpp"
#include "wsod/midn.hpp"

namespace wsod {

enum class SeedOrigin { base, finetuned };

struct Seed {
  Box box;
  int cls = 0;
  double confidence = 0.0;
  SeedOrigin origin = SeedOrigin::base;
};

using SeedSet = std::vector<Seed>;

inline std::vector<Box> seed_boxes(const SeedSet& seeds) {
  std::vector<Box> out;
  out.reserve(seeds.size());
  for (const auto& s : seeds) out.push_back(s.box);
  return out;
}

inline std::vector<int> seed_classes(const SeedSet& seeds) {
  std::vector<int> out;
  out.reserve(seeds.size());
  for (const auto& s : seeds) out.push_back(s.cls);
  return out;
}

inline std::vector<BoxAssignment> assign_to_seeds(std::span<const Box> proposals, const SeedSet& seeds) {
  const auto boxes = seed_boxes(seeds);
  const auto classes = seed_classes(seeds);
  return assign_to_seeds(proposals, boxes, classes);
}

// ---------------------------------------------------------------------------
// ICBC scoring

/// Sigmoid of the ICBC head output, classes x samples. `logits` keeps the
/// pre-sigmoid values in the same orientation.
struct IcbcScores {
  Matrix logits;
  Matrix prob;
};

inline IcbcScores icbc_forward(const LinearHead& head, const Matrix& features) {
  IcbcScores s;
  s.logits = transpose(linear_forward(head, features));
  s.prob = sigmoid(s.logits);
  return s;
}

// ---------------------------------------------------------------------------
// Seed mining

/// Soft-threshold seed mining. For each present class c, proposals scoring at
/// least alpha * max_i score[c, i] are kept, then class-wise NMS at tau_nms
/// removes redundant ones. Only the first C rows of `scores` are read, so a
/// (C+1)-row MCC matrix with a trailing background row can be passed directly.
inline SeedSet mine_base_seeds(const Matrix& scores, const Labels& y, std::span<const Box> boxes,
                               double alpha, double tau_nms) {
  if (scores.cols() != boxes.size()) throw ShapeError("mine_base_seeds: score columns != proposal count");
  if (scores.rows() < y.size()) throw ShapeError("mine_base_seeds: fewer score rows than classes");
  if (boxes.empty()) throw NoSupervisionError("mine_base_seeds: no proposals");
  SeedSet seeds;
  for (std::size_t c = 0; c < y.size(); ++c) {
    if (y[c] != 1) continue;
    const auto row = scores.row(c);
    const double top = *std::max_element(row.begin(), row.end());
    const double thresh = alpha * top;
    std::vector<Box> cand_boxes;
    std::vector<double> cand_scores;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (row[i] >= thresh) {
        cand_boxes.push_back(boxes[i]);
        cand_scores.push_back(row[i]);
      }
    for (std::size_t k : nms(cand_boxes, cand_scores, tau_nms))
      seeds.push_back({cand_boxes[k], static_cast<int>(c), cand_scores[k], SeedOrigin::base});
  }
  return seeds;
}

/// Single top-scoring proposal per present class (ties by lower index).
inline SeedSet mine_top1_seeds(const Matrix& scores, const Labels& y, std::span<const Box> boxes) {
  if (scores.cols() != boxes.size()) throw ShapeError("mine_top1_seeds: score columns != proposal count");
  if (boxes.empty()) throw NoSupervisionError("mine_top1_seeds: no proposals");
  SeedSet seeds;
  for (std::size_t c = 0; c < y.size(); ++c) {
    if (y[c] != 1) continue;
    const auto row = scores.row(c);
    const auto it = std::max_element(row.begin(), row.end());
    seeds.push_back({boxes[static_cast<std::size_t>(it - row.begin())], static_cast<int>(c), *it, SeedOrigin::base});
  }
  return seeds;
}

/// ICBC-guided fine-tuning: for every base seed, the surrounding proposal
/// (IoU >= tau_sur, the seed itself included) with the highest ICBC score in
/// the seed's class is appended as a fine-tuned seed inheriting the parent's
/// confidence. Exact box+class duplicates are skipped.
inline SeedSet icbc_finetune_seeds(const SeedSet& base, std::span<const Box> boxes, const Matrix& icbc_prob,
                                   double tau_sur) {
  if (icbc_prob.cols() != boxes.size()) throw ShapeError("icbc_finetune_seeds: score columns != proposal count");
  SeedSet out = base;
  for (const Seed& s : base) {
    if (s.origin != SeedOrigin::base) continue;
    const auto row = icbc_prob.row(static_cast<std::size_t>(s.cls));
    std::size_t best = boxes.size();
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      if (iou(boxes[j], s.box) < tau_sur) continue;
      if (best == boxes.size() || row[j] > row[best]) best = j;
    }
    if (best == boxes.size()) continue;
    const Box& pick = boxes[best];
    const bool dup = std::any_of(out.begin(), out.end(),
                                 [&](const Seed& o) { return o.cls == s.cls && o.box == pick; });
    if (!dup) out.push_back({pick, s.cls, s.confidence, SeedOrigin::finetuned});
  }
  return out;
}

// ---------------------------------------------------------------------------
// ICBC sampling and loss

enum class SampleKind { pos, neg, grid };

struct IcbcSample {
  Box region;
  SampleKind kind = SampleKind::pos;
  int cls = 0;
  /// Row of the proposal feature matrix, or -1 for synthesized grid cells.
  long proposal_index = -1;
};

struct IcbcSampleSet {
  std::vector<IcbcSample> samples;
  Matrix targets;  // C x |U|
  Matrix weights;  // C x |U|

  std::size_t size() const { return samples.size(); }

  std::vector<Box> grid_regions() const {
    std::vector<Box> out;
    for (const auto& s : samples)
      if (s.kind == SampleKind::grid) out.push_back(s.region);
    return out;
  }
};

struct IcbcSamplingParams {
  double tau_l = 0.1;
  double tau_h = 0.5;
  double theta = 0.5;
  int grid_n = 2;
  double grid_weight = 1.5;  // q
  bool gridding = true;
};

/// IoU sampling against the nearest seed, followed by gridding sampling.
/// Proposal samples come first (in proposal order) and grid cells last (seed
/// order, then row-major cell order).
template <typename Rng>
IcbcSampleSet sample_icbc(std::span<const Box> boxes, const SeedSet& seeds, std::size_t num_classes,
                          const IcbcSamplingParams& p, Rng& rng, const Box& image_bounds) {
  const auto assign = assign_to_seeds(boxes, seeds);
  struct Pending {
    IcbcSample sample;
    double weight;
  };
  std::vector<Pending> pend;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& a = assign[i];
    if (a.max_iou < p.tau_l) continue;
    const SampleKind kind = a.max_iou >= p.tau_h ? SampleKind::pos : SampleKind::neg;
    pend.push_back({{boxes[i], kind, a.seed_class, static_cast<long>(i)}, seeds[a.seed_index].confidence});
  }
  if (p.gridding) {
    for (const Seed& s : seeds) {
      const Box scaled = scale_box(s.box, p.theta, rng, image_bounds);
      for (const Box& cell : grid_boxes(scaled, p.grid_n))
        pend.push_back({{cell, SampleKind::grid, s.cls, -1}, p.grid_weight});
    }
  }
  IcbcSampleSet out;
  out.targets = Matrix(num_classes, pend.size());
  out.weights = Matrix(num_classes, pend.size());
  for (std::size_t u = 0; u < pend.size(); ++u) {
    const auto& s = pend[u].sample;
    const auto c = static_cast<std::size_t>(s.cls);
    out.weights(c, u) = pend[u].weight;
    if (s.kind == SampleKind::pos) out.targets(c, u) = 1.0;
    out.samples.push_back(s);
  }
  return out;
}

/// Weighted binary cross-entropy averaged over |U|. Takes sigmoid
/// probabilities; the returned gradient is w.r.t. the pre-sigmoid logits.
inline LossValue icbc_loss(const Matrix& prob, const Matrix& targets, const Matrix& weights) {
  require_same_shape(prob, targets, "icbc_loss");
  require_same_shape(prob, weights, "icbc_loss");
  LossValue out{0.0, Matrix(prob.rows(), prob.cols())};
  const std::size_t U = prob.cols();
  if (U == 0) return out;
  const double inv = 1.0 / static_cast<double>(U);
  for (std::size_t k = 0; k < prob.size(); ++k) {
    const double w = weights.data()[k];
    if (w == 0.0) continue;
    const double raw = prob.data()[k];
    const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    const double y = targets.data()[k];
    out.value -= inv * w * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    if (p == raw) out.grad.data()[k] = inv * w * (raw - y);
  }
  return out;
}

inline LossValue icbc_loss(const Matrix& prob, const IcbcSampleSet& set) {
  return icbc_loss(prob, set.targets, set.weights);
}

// ---------------------------------------------------------------------------
// MCC targets and loss

/// Per-proposal pseudo labels for a (C+1)-way classifier. Class ids are
/// 0-based; `background` == C.
struct MccTargets {
  std::vector<int> labels;
  std::vector<double> weights;
  int background = 0;
};

struct MccAssignParams {
  double tau_h = 0.5;
  /// Weight for proposals with zero overlap to every seed: the tie-rule
  /// seed's confidence (default), or 1.0 when false.
  bool zero_overlap_uses_seed_confidence = true;
};

inline MccTargets assign_mcc_targets(std::span<const Box> boxes, const SeedSet& seeds, std::size_t num_classes,
                                     const MccAssignParams& p = {}) {
  const auto assign = assign_to_seeds(boxes, seeds);
  MccTargets t;
  t.background = static_cast<int>(num_classes);
  t.labels.resize(boxes.size());
  t.weights.resize(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& a = assign[i];
    t.labels[i] = a.max_iou >= p.tau_h ? a.seed_class : t.background;
    t.weights[i] = seeds[a.seed_index].confidence;
    if (a.max_iou == 0.0 && !p.zero_overlap_uses_seed_confidence) t.weights[i] = 1.0;
  }
  return t;
}

/// Weighted cross-entropy averaged over proposals. `prob` is the
/// (C+1) x |R| class-softmax output; the gradient is w.r.t. its logits.
inline LossValue mcc_loss(const Matrix& prob, const std::vector<int>& labels, const std::vector<double>& weights) {
  if (prob.cols() != labels.size() || labels.size() != weights.size())
    throw ShapeError("mcc_loss: proposal count mismatch");
  LossValue out{0.0, Matrix(prob.rows(), prob.cols())};
  const std::size_t R = prob.cols();
  if (R == 0) return out;
  const double inv = 1.0 / static_cast<double>(R);
  for (std::size_t i = 0; i < R; ++i) {
    const double w = weights[i];
    if (w == 0.0) continue;
    const auto lab = static_cast<std::size_t>(labels[i]);
    if (lab >= prob.rows()) throw ShapeError("mcc_loss: label out of range");
    const double raw = prob(lab, i);
    const double p = std::max(raw, kProbClamp);
    out.value -= inv * w * std::log(p);
    if (p != raw) continue;
    for (std::size_t k = 0; k < prob.rows(); ++k)
      out.grad(k, i) = inv * w * (prob(k, i) - (k == lab ? 1.0 : 0.0));
  }
  return out;
}

inline LossValue mcc_loss(const Matrix& prob, const MccTargets& t) { return mcc_loss(prob, t.labels, t.weights); }

}  // namespace wsod

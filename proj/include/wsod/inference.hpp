#pragma once

#include <algorithm>
#include <set>
#include <span>
#include <vector>

#include "wsod/box.hpp"
#include "wsod/error.hpp"
#include "wsod/matrix.hpp"
#include "wsod/rcnn.hpp"

namespace wsod {

// Score matrices at this boundary are proposals x classes (transposed from the
// training-side classes x proposals layout; see to_proposal_major).

inline Matrix to_proposal_major(const Matrix& class_major) { return transpose(class_major); }

/// Elementwise mean of K >= 1 equally shaped matrices.
inline Matrix aggregate(std::span<const Matrix> members) {
  if (members.empty()) throw Error("aggregate: empty score list");
  Matrix out(members[0].rows(), members[0].cols());
  for (const auto& m : members) {
    require_same_shape(members[0], m, "aggregate");
    for (std::size_t k = 0; k < m.size(); ++k) out.data()[k] += m.data()[k];
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (double& v : out.data()) v *= inv;
  return out;
}

struct SccOptions {
  double lambda = 0.01;
  double tau_midn = 0.001;
  /// With no confident MIDN proposal, leave F unchanged rather than scaling
  /// every foreground class.
  bool empty_is_noop = true;
};

struct SccResult {
  Matrix scores;
  std::vector<int> image_classes;   // classes predicted present by MIDN
  std::vector<int> absent_classes;  // columns that were scaled
};

/// Self-classification correction. `pipeline` is |R| x (C+1) with the
/// background in the last column, `midn` is |R| x C. Foreground columns of
/// classes that no confident MIDN proposal argmaxes to are multiplied by
/// lambda; the background column is never touched.
inline SccResult scc(const Matrix& pipeline, const Matrix& midn, const SccOptions& opt = {}) {
  const std::size_t R = midn.rows(), C = midn.cols();
  if (pipeline.rows() != R || pipeline.cols() != C + 1)
    throw ShapeError("scc: pipeline scores must be |R| x (C+1) with MIDN |R| x C");
  std::set<int> present;
  bool any_confident = false;
  for (std::size_t i = 0; i < R; ++i) {
    const auto row = midn.row(i);
    const auto it = std::max_element(row.begin(), row.end());
    if (it == row.end() || !(*it > opt.tau_midn)) continue;
    any_confident = true;
    present.insert(static_cast<int>(it - row.begin()));
  }
  SccResult res{pipeline, {present.begin(), present.end()}, {}};
  if (!any_confident && opt.empty_is_noop) return res;
  for (std::size_t c = 0; c < C; ++c) {
    if (present.count(static_cast<int>(c))) continue;
    res.absent_classes.push_back(static_cast<int>(c));
    for (std::size_t i = 0; i < R; ++i) res.scores(i, c) *= opt.lambda;
  }
  return res;
}

struct Detection {
  Box box;
  int cls = 0;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

using DetectionList = std::vector<Detection>;

struct DetectParams {
  double score_threshold = 1e-3;
  double nms_threshold = 0.3;
};

/// Per foreground class: keep proposals with score > threshold, refine them
/// with the regression output, then class-wise NMS. Output is ordered by
/// class, then by descending score.
inline DetectionList detect(const Matrix& scores, std::span<const Box> boxes, const Matrix& reg_deltas,
                            const DetectParams& p, const Box& bounds) {
  if (scores.rows() != boxes.size() || reg_deltas.cols() != boxes.size())
    throw ShapeError("detect: proposal count mismatch");
  const std::size_t C = scores.cols() - 1;
  DetectionList out;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<Box> cand;
    std::vector<double> cand_scores;
    std::vector<int> cls;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (scores(i, c) > p.score_threshold) idx.push_back(i);
    if (idx.empty()) continue;
    Matrix d(reg_deltas.rows(), idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      cand.push_back(boxes[idx[k]]);
      cand_scores.push_back(scores(idx[k], c));
      cls.push_back(static_cast<int>(c));
      for (std::size_t r = 0; r < reg_deltas.rows(); ++r) d(r, k) = reg_deltas(r, idx[k]);
    }
    const auto refined = apply_regression(cand, d, cls, bounds);
    for (std::size_t k : nms(refined, cand_scores, p.nms_threshold))
      out.push_back({refined[k], static_cast<int>(c), cand_scores[k]});
  }
  return out;
}

}  // namespace wsod

#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <spdlog/spdlog.h>

#include "wsod/box.hpp"
#include "wsod/inference.hpp"
#include "wsod/midn.hpp"

namespace wsod {

struct GroundTruthBox {
  Box box;
  int cls = 0;
};

using GroundTruthList = std::vector<GroundTruthBox>;

enum class ApProtocol { eleven_point, all_point };

/// Average precision from a precision/recall curve ordered by descending score.
inline double average_precision(const std::vector<double>& recall, const std::vector<double>& precision,
                                ApProtocol protocol) {
  if (protocol == ApProtocol::eleven_point) {
    double ap = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double t = k / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < recall.size(); ++i)
        if (recall[i] >= t) p = std::max(p, precision[i]);
      ap += p / 11.0;
    }
    return ap;
  }
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i)
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return ap;
}

struct MapResult {
  std::vector<std::optional<double>> ap;  // per class; empty when the class has no ground truth
  double map = 0.0;
};

/// VOC-style detection AP at a fixed IoU threshold. Detections of a class are
/// pooled across images and visited by descending score (ties keep image
/// order, then list order). A detection is a true positive when it overlaps
/// an unmatched ground-truth box of its class by at least `iou_threshold`;
/// it claims the best-overlapping such box.
inline MapResult eval_map(std::span<const DetectionList> detections, std::span<const GroundTruthList> ground_truth,
                          std::size_t num_classes, double iou_threshold = 0.5,
                          ApProtocol protocol = ApProtocol::eleven_point) {
  if (detections.size() != ground_truth.size()) throw ShapeError("eval_map: image count mismatch");
  MapResult res;
  res.ap.resize(num_classes);
  double sum = 0.0;
  int counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    struct Entry {
      double score;
      std::size_t image;
      Box box;
    };
    std::vector<Entry> entries;
    std::vector<std::vector<Box>> gts(ground_truth.size());
    std::size_t npos = 0;
    for (std::size_t im = 0; im < ground_truth.size(); ++im) {
      for (const auto& g : ground_truth[im])
        if (g.cls == static_cast<int>(c)) gts[im].push_back(g.box);
      npos += gts[im].size();
      for (const auto& d : detections[im])
        if (d.cls == static_cast<int>(c)) entries.push_back({d.score, im, d.box});
    }
    if (npos == 0) {
      spdlog::debug("eval_map: class {} has no ground truth; excluded from mAP", c);
      continue;
    }
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });
    std::vector<std::vector<char>> used(gts.size());
    for (std::size_t im = 0; im < gts.size(); ++im) used[im].assign(gts[im].size(), 0);
    std::vector<double> recall, precision;
    std::size_t tp = 0, fp = 0;
    for (const auto& e : entries) {
      double best = -1.0;
      std::size_t best_k = 0;
      for (std::size_t k = 0; k < gts[e.image].size(); ++k) {
        if (used[e.image][k]) continue;
        const double v = iou(e.box, gts[e.image][k]);
        if (v > best) {
          best = v;
          best_k = k;
        }
      }
      if (best >= iou_threshold) {
        used[e.image][best_k] = 1;
        ++tp;
      } else {
        ++fp;
      }
      recall.push_back(static_cast<double>(tp) / static_cast<double>(npos));
      precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    const double ap = average_precision(recall, precision, protocol);
    res.ap[c] = ap;
    sum += ap;
    ++counted;
  }
  res.map = counted > 0 ? sum / counted : 0.0;
  return res;
}

/// Fraction of (image, present class) pairs whose top-scoring detection of
/// that class overlaps a ground-truth box of the class by >= iou_threshold.
inline double eval_corloc(std::span<const DetectionList> detections, std::span<const GroundTruthList> ground_truth,
                          std::span<const Labels> labels, double iou_threshold = 0.5) {
  if (detections.size() != ground_truth.size() || labels.size() != ground_truth.size())
    throw ShapeError("eval_corloc: image count mismatch");
  std::size_t pairs = 0, correct = 0;
  for (std::size_t im = 0; im < labels.size(); ++im) {
    for (std::size_t c = 0; c < labels[im].size(); ++c) {
      if (labels[im][c] != 1) continue;
      ++pairs;
      const Detection* top = nullptr;
      for (const auto& d : detections[im])
        if (d.cls == static_cast<int>(c) && (top == nullptr || d.score > top->score)) top = &d;
      if (top == nullptr) continue;
      const bool hit = std::any_of(ground_truth[im].begin(), ground_truth[im].end(), [&](const GroundTruthBox& g) {
        return g.cls == static_cast<int>(c) && iou(top->box, g.box) >= iou_threshold;
      });
      if (hit) ++correct;
    }
  }
  return pairs == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(pairs);
}

/// Share of detections whose class is present in the image's labels; empty
/// when there are no detections at all.
inline std::optional<double> eval_ilc(std::span<const DetectionList> detections, std::span<const Labels> labels) {
  if (detections.size() != labels.size()) throw ShapeError("eval_ilc: image count mismatch");
  std::size_t total = 0, positive = 0;
  for (std::size_t im = 0; im < detections.size(); ++im)
    for (const auto& d : detections[im]) {
      ++total;
      const auto c = static_cast<std::size_t>(d.cls);
      if (c < labels[im].size() && labels[im][c] == 1) ++positive;
    }
  if (total == 0) return std::nullopt;
  return static_cast<double>(positive) / static_cast<double>(total);
}

}  // namespace wsod

#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "wsod/error.hpp"

namespace wsod {

/// Axis-aligned box in continuous image coordinates, corner convention.
/// Area is (x2 - x1) * (y2 - y1), no +1 pixel term.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  bool valid() const { return x1 <= x2 && y1 <= y2; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline Box from_center(double cx, double cy, double w, double h) {
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

inline Box clip(const Box& b, const Box& bounds) {
  Box r{std::clamp(b.x1, bounds.x1, bounds.x2), std::clamp(b.y1, bounds.y1, bounds.y2),
        std::clamp(b.x2, bounds.x1, bounds.x2), std::clamp(b.y2, bounds.y1, bounds.y2)};
  return r;
}

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

/// Intersection over union; 0 when the union is empty.
inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

struct BoxAssignment {
  double max_iou = 0.0;
  std::size_t seed_index = 0;
  int seed_class = 0;
};

/// Nearest seed (maximum IoU) for every proposal. Ties go to the lowest seed
/// index. Throws NoSupervisionError when there are no seeds.
inline std::vector<BoxAssignment> assign_to_seeds(std::span<const Box> proposals,
                                                  std::span<const Box> seed_boxes,
                                                  std::span<const int> seed_classes) {
  if (seed_boxes.empty()) throw NoSupervisionError("assign_to_seeds: empty seed set");
  if (seed_boxes.size() != seed_classes.size())
    throw ShapeError("assign_to_seeds: seed boxes and classes differ in length");
  std::vector<BoxAssignment> out(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    BoxAssignment best{iou(proposals[i], seed_boxes[0]), 0, seed_classes[0]};
    for (std::size_t j = 1; j < seed_boxes.size(); ++j) {
      const double v = iou(proposals[i], seed_boxes[j]);
      if (v > best.max_iou) best = {v, j, seed_classes[j]};
    }
    out[i] = best;
  }
  return out;
}

/// Greedy non-maximum suppression. Boxes are visited by descending score
/// (ties by lower index); a box is dropped when its IoU with an already kept
/// box is strictly greater than `iou_threshold`. Returns kept indices in
/// selection order.
inline std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                                    double iou_threshold) {
  if (boxes.size() != scores.size()) throw ShapeError("nms: boxes and scores differ in length");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<std::size_t> keep;
  std::vector<char> suppressed(boxes.size(), 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou(boxes[i], boxes[j]) > iou_threshold) suppressed[j] = 1;
    }
  }
  return keep;
}

/// Random rescaling about the box centre: width drawn from
/// [(1-theta)w, (1+theta)w], height likewise; the result is clipped to `bounds`.
template <typename Rng>
Box scale_box(const Box& box, double theta, Rng& rng, const Box& bounds) {
  if (theta <= 0.0) return clip(box, bounds);
  std::uniform_real_distribution<double> factor(1.0 - theta, 1.0 + theta);
  const double sw = factor(rng);
  const double sh = factor(rng);
  return clip(from_center(box.cx(), box.cy(), box.width() * sw, box.height() * sh), bounds);
}

/// n x n equal cells in row-major order (x varies fastest). Cell edges are
/// computed from the shared grid lines so neighbouring cells tile exactly.
inline std::vector<Box> grid_boxes(const Box& box, int n) {
  if (n < 1) throw Error("grid_boxes: n must be positive");
  std::vector<double> xs(n + 1), ys(n + 1);
  for (int k = 0; k <= n; ++k) {
    xs[k] = box.x1 + box.width() * k / n;
    ys[k] = box.y1 + box.height() * k / n;
  }
  xs[n] = box.x2;
  ys[n] = box.y2;
  std::vector<Box> cells;
  cells.reserve(static_cast<std::size_t>(n) * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) cells.push_back({xs[c], ys[r], xs[c + 1], ys[r + 1]});
  return cells;
}

}  // namespace wsod

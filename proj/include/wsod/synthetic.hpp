#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "wsod/box.hpp"
#include "wsod/matrix.hpp"
#include "wsod/metrics.hpp"
#include "wsod/midn.hpp"

namespace wsod {

struct SceneObject {
  int cls = 0;
  Box extent;  // full object
  Box part;    // discriminative part, strictly inside `extent`
  double part_saliency = 1.0;  // scales the part response of this instance
};

/// A synthetic image: objects on a blank canvas plus the derived labels.
struct SyntheticScene {
  std::string id;
  std::uint64_t key = 0;  // seeds the per-box feature noise
  double width = 0.0;
  double height = 0.0;
  std::vector<SceneObject> objects;
  Labels labels;

  Box bounds() const { return {0.0, 0.0, width, height}; }

  GroundTruthList ground_truth() const {
    GroundTruthList out;
    for (const auto& o : objects) out.push_back({o.extent, o.cls});
    return out;
  }
};

struct DataParams {
  int num_classes = 5;
  int train_size = 200;
  int test_size = 100;
  double canvas = 256.0;
  int min_objects = 1;
  int max_objects = 4;
  double min_object_size = 48.0;
  double max_object_size = 128.0;
  double min_part_ratio = 0.05;  // area(part) / area(extent)
  double max_part_ratio = 0.4;
  double same_class_max_iou = 0.3;
  int placement_retries = 50;
  // feature model
  double part_strength = 1.0;  // s_part
  double full_strength = 0.6;  // s_full
  double min_part_saliency = 0.2;  // per-object part saliency drawn from [min, 1]
  double noise_std = 0.05;
  int noise_dims = 8;
  // proposal generator
  int jitters_per_box = 10;
  double max_jitter = 0.3;
  int random_proposals = 60;
  int bridge_proposals = 0;  // boxes interpolated between each part and its extent

  friend bool operator==(const DataParams&, const DataParams&) = default;
};

struct Dataset {
  std::vector<SyntheticScene> train;
  std::vector<SyntheticScene> test;
};

namespace detail {

template <typename Rng>
SyntheticScene make_scene(const DataParams& p, std::string id, std::uint64_t key, Rng& rng) {
  SyntheticScene s;
  s.id = std::move(id);
  s.key = key;
  s.width = p.canvas;
  s.height = p.canvas;
  s.labels.assign(static_cast<std::size_t>(p.num_classes), 0);

  std::uniform_int_distribution<int> count_dist(p.min_objects, p.max_objects);
  std::uniform_int_distribution<int> class_dist(0, p.num_classes - 1);
  std::uniform_real_distribution<double> size_dist(p.min_object_size, p.max_object_size);
  std::uniform_real_distribution<double> ratio_dist(p.min_part_ratio, p.max_part_ratio);
  std::uniform_real_distribution<double> aspect_dist(0.8, 1.25);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> saliency_dist(std::min(p.min_part_saliency, 1.0), 1.0);

  const int n = count_dist(rng);
  for (int k = 0; k < n; ++k) {
    const int cls = class_dist(rng);
    bool placed = false;
    for (int attempt = 0; attempt < p.placement_retries && !placed; ++attempt) {
      const double w = size_dist(rng), h = size_dist(rng);
      const double x1 = unit(rng) * (p.canvas - w), y1 = unit(rng) * (p.canvas - h);
      const Box extent{x1, y1, x1 + w, y1 + h};
      const double r = ratio_dist(rng), a = aspect_dist(rng);
      const double pw = w * std::sqrt(r) * a, ph = h * std::sqrt(r) / a;
      const double px1 = x1 + 1.0 + unit(rng) * (w - pw - 2.0);
      const double py1 = y1 + 1.0 + unit(rng) * (h - ph - 2.0);
      const Box part{px1, py1, px1 + pw, py1 + ph};
      const bool clash = std::any_of(s.objects.begin(), s.objects.end(), [&](const SceneObject& o) {
        return o.cls == cls && iou(o.extent, extent) > p.same_class_max_iou;
      });
      if (clash) continue;
      s.objects.push_back({cls, extent, part, saliency_dist(rng)});
      s.labels[static_cast<std::size_t>(cls)] = 1;
      placed = true;
    }
    if (!placed) spdlog::debug("scene {}: could not place object {} of class {}", s.id, k, cls);
  }
  return s;
}

}  // namespace detail

/// Deterministic train/test scenes for a seed.
inline Dataset gen_dataset(const DataParams& p, std::uint64_t seed) {
  Dataset d;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < p.train_size; ++i)
    d.train.push_back(detail::make_scene(p, fmt::format("train_{:04d}", i), rng(), rng));
  for (int i = 0; i < p.test_size; ++i)
    d.test.push_back(detail::make_scene(p, fmt::format("test_{:04d}", i), rng(), rng));
  return d;
}

/// Procedural region proposals: jittered copies of every object extent and
/// part, sliding windows at three scales, and uniform random boxes. Boxes
/// are clipped to the canvas; tiny and exactly duplicated boxes are dropped.
inline std::vector<Box> gen_proposals(const SyntheticScene& scene, const DataParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ scene.key);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<Box> raw;

  auto jitter = [&](const Box& b, double m) {
    const double w = b.width(), h = b.height();
    return Box{b.x1 + unit(rng) * m * w, b.y1 + unit(rng) * m * h, b.x2 + unit(rng) * m * w,
               b.y2 + unit(rng) * m * h};
  };
  const int K = std::max(p.jitters_per_box, 1);
  for (const auto& o : scene.objects)
    for (const Box& b : {o.extent, o.part})
      for (int k = 0; k < K; ++k) {
        // the first copy is always a tight one
        const double m = K == 1 ? 0.03 : 0.03 + (p.max_jitter - 0.03) * k / (K - 1);
        raw.push_back(jitter(b, m));
      }

  // Nested boxes growing from the part to the full extent, the way
  // hierarchical grouping merges a salient region with its surroundings.
  for (const auto& o : scene.objects)
    for (int k = 1; k <= p.bridge_proposals; ++k) {
      const double t = static_cast<double>(k) / (p.bridge_proposals + 1);
      const Box b{o.part.x1 + t * (o.extent.x1 - o.part.x1), o.part.y1 + t * (o.extent.y1 - o.part.y1),
                  o.part.x2 + t * (o.extent.x2 - o.part.x2), o.part.y2 + t * (o.extent.y2 - o.part.y2)};
      raw.push_back(jitter(b, 0.03));
    }

  for (double size : {64.0, 96.0, 128.0}) {
    const double stride = size / 2.0;
    for (double y = 0.0; y + size <= scene.height + 1e-9; y += stride)
      for (double x = 0.0; x + size <= scene.width + 1e-9; x += stride) raw.push_back({x, y, x + size, y + size});
  }

  std::uniform_real_distribution<double> side(16.0, 0.8 * std::min(scene.width, scene.height));
  std::uniform_real_distribution<double> pos(0.0, 1.0);
  for (int k = 0; k < p.random_proposals; ++k) {
    const double w = side(rng), h = side(rng);
    const double x1 = pos(rng) * (scene.width - w), y1 = pos(rng) * (scene.height - h);
    raw.push_back({x1, y1, x1 + w, y1 + h});
  }

  std::vector<Box> out;
  for (const Box& r : raw) {
    Box b = clip(r, scene.bounds());
    if (b.x1 > b.x2) std::swap(b.x1, b.x2);
    if (b.y1 > b.y2) std::swap(b.y1, b.y2);
    if (b.width() < 4.0 || b.height() < 4.0) continue;
    if (std::find(out.begin(), out.end(), b) != out.end()) continue;
    out.push_back(b);
  }
  return out;
}

inline std::size_t feature_dim(const DataParams& p) {
  return static_cast<std::size_t>(2 * p.num_classes + p.noise_dims);
}

/// Frozen region feature model, one row per box. For class c, column 2c is
/// the best overlap with a class-c part times s_part (and the instance's part
/// saliency) and column 2c+1 the
/// best overlap with a class-c extent times s_full. The trailing noise
/// columns depend only on (scene, box).
inline Matrix gen_features(const SyntheticScene& scene, std::span<const Box> boxes, const DataParams& p) {
  const std::size_t C = static_cast<std::size_t>(p.num_classes);
  Matrix f(boxes.size(), feature_dim(p));
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (const auto& o : scene.objects) {
      const auto c = static_cast<std::size_t>(o.cls);
      f(i, 2 * c) = std::max(f(i, 2 * c), iou(boxes[i], o.part) * p.part_strength * o.part_saliency);
      f(i, 2 * c + 1) = std::max(f(i, 2 * c + 1), iou(boxes[i], o.extent) * p.full_strength);
    }
    if (p.noise_dims > 0) {
      const Box& b = boxes[i];
      std::seed_seq seq{static_cast<std::uint32_t>(scene.key), static_cast<std::uint32_t>(scene.key >> 32),
                        static_cast<std::uint32_t>(std::bit_cast<std::uint64_t>(b.x1)),
                        static_cast<std::uint32_t>(std::bit_cast<std::uint64_t>(b.x1) >> 32),
                        static_cast<std::uint32_t>(std::bit_cast<std::uint64_t>(b.y1)),
                        static_cast<std::uint32_t>(std::bit_cast<std::uint64_t>(b.y1) >> 32),
                        static_cast<std::uint32_t>(std::bit_cast<std::uint64_t>(b.x2)),
                        static_cast<std::uint32_t>(std::bit_cast<std::uint64_t>(b.x2) >> 32),
                        static_cast<std::uint32_t>(std::bit_cast<std::uint64_t>(b.y2)),
                        static_cast<std::uint32_t>(std::bit_cast<std::uint64_t>(b.y2) >> 32)};
      std::mt19937_64 rng(seq);
      std::normal_distribution<double> noise(0.0, p.noise_std);
      for (int k = 0; k < p.noise_dims; ++k) f(i, 2 * C + static_cast<std::size_t>(k)) = noise(rng);
    }
  }
  return f;
}

}  // namespace wsod

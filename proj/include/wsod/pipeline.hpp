#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "wsod/config.hpp"
#include "wsod/inference.hpp"
#include "wsod/metrics.hpp"
#include "wsod/midn.hpp"
#include "wsod/model.hpp"
#include "wsod/synthetic.hpp"

namespace wsod {

/// A scene with its proposals and their (frozen) features.
struct PreparedImage {
  SyntheticScene scene;
  std::vector<Box> proposals;
  Matrix features;
};

struct PreparedData {
  std::vector<PreparedImage> train;
  std::vector<PreparedImage> test;
};

inline PreparedImage prepare_image(const SyntheticScene& s, const RunConfig& cfg) {
  PreparedImage img{s, gen_proposals(s, cfg.data, cfg.seed), {}};
  img.features = gen_features(s, img.proposals, cfg.data);
  return img;
}

inline PreparedData prepare_data(const Dataset& d, const RunConfig& cfg) {
  PreparedData out;
  for (const auto& s : d.train) out.train.push_back(prepare_image(s, cfg));
  for (const auto& s : d.test) out.test.push_back(prepare_image(s, cfg));
  return out;
}

inline PreparedData prepare_data(const RunConfig& cfg) { return prepare_data(gen_dataset(cfg.data, cfg.seed), cfg); }

/// Class-major (classes x proposals) head output.
inline Matrix head_scores(const LinearHead& h, const Matrix& features) {
  return transpose(linear_forward(h, features));
}

/// Inference-side score matrices for one image, proposals x classes.
struct ImageScores {
  Matrix midn;          // |R| x C, fused MIDN scores
  Matrix pipeline;      // |R| x (C+1), mean of MCC stages and R-CNN classifier
  Matrix reg_deltas;    // 4 x |R| or 4C x |R|
};

inline ImageScores score_image(const Model& m, const PreparedImage& img) {
  const auto mid = midn_forward(head_scores(m.midn_cls, img.features), head_scores(m.midn_det, img.features));
  std::vector<Matrix> members;
  for (const auto& h : m.mcc) members.push_back(to_proposal_major(softmax_over_classes(head_scores(h, img.features))));
  members.push_back(to_proposal_major(softmax_over_classes(head_scores(m.rcnn_cls, img.features))));
  return {to_proposal_major(mid.x_box), aggregate(members), head_scores(m.rcnn_reg, img.features)};
}

inline DetectParams detect_params(const RunConfig& cfg) {
  return {cfg.inference.score_threshold, cfg.inference.nms_threshold};
}

inline SccOptions scc_options(const RunConfig& cfg) {
  return {cfg.scc.lambda, cfg.scc.tau_midn, cfg.scc.empty_is_noop};
}

inline DetectionList detect_image(const ImageScores& s, const PreparedImage& img, const RunConfig& cfg, bool use_scc) {
  const Matrix scores = use_scc ? scc(s.pipeline, s.midn, scc_options(cfg)).scores : s.pipeline;
  return detect(scores, img.proposals, s.reg_deltas, detect_params(cfg), img.scene.bounds());
}

/// Detections from the MIDN scores alone (zero background column appended).
inline DetectionList detect_midn(const ImageScores& s, const PreparedImage& img, const RunConfig& cfg) {
  Matrix padded(s.midn.rows(), s.midn.cols() + 1);
  for (std::size_t i = 0; i < s.midn.rows(); ++i)
    for (std::size_t c = 0; c < s.midn.cols(); ++c) padded(i, c) = s.midn(i, c);
  return detect(padded, img.proposals, s.reg_deltas, detect_params(cfg), img.scene.bounds());
}

inline std::vector<DetectionList> detect_split(const Model& m, const std::vector<PreparedImage>& split,
                                               const RunConfig& cfg, bool use_scc) {
  std::vector<DetectionList> out;
  out.reserve(split.size());
  for (const auto& img : split) out.push_back(detect_image(score_image(m, img), img, cfg, use_scc));
  return out;
}

struct EvalReport {
  std::string config_digest;
  MapResult map;
  double corloc = 0.0;
  std::optional<double> ilc;
  std::vector<DetectionList> test_detections;
};

inline std::vector<GroundTruthList> ground_truth_of(const std::vector<PreparedImage>& split) {
  std::vector<GroundTruthList> out;
  for (const auto& img : split) out.push_back(img.scene.ground_truth());
  return out;
}

inline std::vector<Labels> labels_of(const std::vector<PreparedImage>& split) {
  std::vector<Labels> out;
  for (const auto& img : split) out.push_back(img.scene.labels);
  return out;
}

/// mAP and ILC accuracy on the test split, CorLoc on the training split.
/// SCC is applied when cfg.switches.scc is set.
inline EvalReport evaluate(const Model& m, const PreparedData& data, const RunConfig& cfg) {
  EvalReport r;
  r.config_digest = config_digest(cfg);
  const bool use_scc = cfg.switches.scc;
  r.test_detections = detect_split(m, data.test, cfg, use_scc);
  const auto gt_test = ground_truth_of(data.test);
  r.map = eval_map(r.test_detections, gt_test, m.num_classes(), 0.5,
                   cfg.inference.all_point_ap ? ApProtocol::all_point : ApProtocol::eleven_point);
  r.ilc = eval_ilc(r.test_detections, labels_of(data.test));
  const auto train_dets = detect_split(m, data.train, cfg, use_scc);
  r.corloc = eval_corloc(train_dets, ground_truth_of(data.train), labels_of(data.train));
  return r;
}

/// One line per detection: image_id class_id score x1 y1 x2 y2, sorted by
/// image id, class id, then descending score.
inline std::string format_detections(const std::vector<PreparedImage>& split, const std::vector<DetectionList>& dets) {
  struct Row {
    const std::string* image;
    const Detection* det;
  };
  std::vector<Row> rows;
  for (std::size_t im = 0; im < split.size(); ++im)
    for (const auto& d : dets[im]) rows.push_back({&split[im].scene.id, &d});
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (*a.image != *b.image) return *a.image < *b.image;
    if (a.det->cls != b.det->cls) return a.det->cls < b.det->cls;
    return a.det->score > b.det->score;
  });
  std::string out;
  for (const auto& r : rows)
    out += fmt::format("{} {} {:.6f} {:.2f} {:.2f} {:.2f} {:.2f}\n", *r.image, r.det->cls, r.det->score,
                       r.det->box.x1, r.det->box.y1, r.det->box.x2, r.det->box.y2);
  return out;
}

inline nlohmann::json metrics_json(const EvalReport& r) {
  nlohmann::json ap = nlohmann::json::array();
  for (const auto& v : r.map.ap) ap.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  return {{"config_digest", r.config_digest},
          {"per_class_ap", ap},
          {"map", r.map.map},
          {"corloc", r.corloc},
          {"ilc_accuracy", r.ilc ? nlohmann::json(*r.ilc) : nlohmann::json(nullptr)}};
}

inline std::string format_metrics(const EvalReport& r) { return metrics_json(r).dump(2) + "\n"; }

}  // namespace wsod

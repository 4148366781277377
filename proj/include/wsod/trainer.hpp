#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "wsod/config.hpp"
#include "wsod/error.hpp"
#include "wsod/midn.hpp"
#include "wsod/model.hpp"
#include "wsod/pipeline.hpp"
#include "wsod/rcnn.hpp"
#include "wsod/sce.hpp"

namespace wsod {

struct ModelGrads {
  LinearGrads midn_cls, midn_det;
  std::vector<LinearGrads> mcc, icbc;
  LinearGrads rcnn_cls, rcnn_reg;

  explicit ModelGrads(const Model& m)
      : midn_cls(m.midn_cls), midn_det(m.midn_det), rcnn_cls(m.rcnn_cls), rcnn_reg(m.rcnn_reg) {
    for (const auto& h : m.mcc) mcc.emplace_back(h);
    for (const auto& h : m.icbc) icbc.emplace_back(h);
  }
};

/// Loss components for one image or, after averaging, one batch.
struct LossBreakdown {
  double midn = 0.0;
  std::vector<double> mcc;
  std::vector<double> icbc;  // unweighted; enters the total as gamma * icbc
  double rcnn_cls = 0.0;
  double rcnn_reg = 0.0;
  double total = 0.0;

  explicit LossBreakdown(std::size_t stages = 0) : mcc(stages, 0.0), icbc(stages, 0.0) {}

  double compose(double gamma) const {
    double t = midn;
    for (std::size_t s = 0; s < mcc.size(); ++s) t += mcc[s] + gamma * icbc[s];
    return t + rcnn_cls + rcnn_reg;
  }
};

struct StepLog {
  int step = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

inline std::string format_step_log(const StepLog& s) {
  nlohmann::json j{{"step", s.step},
                   {"lr", s.lr},
                   {"midn", s.loss.midn},
                   {"mcc", s.loss.mcc},
                   {"icbc", s.loss.icbc},
                   {"rcnn_cls", s.loss.rcnn_cls},
                   {"rcnn_reg", s.loss.rcnn_reg},
                   {"total", s.loss.total}};
  return j.dump();
}

namespace detail {

inline void check_finite(double v, const PreparedImage& img, const char* stage) {
  if (!std::isfinite(v))
    throw NumericalError(fmt::format("non-finite {} loss on image {}", stage, img.scene.id));
}

}  // namespace detail

/// Seeds for one consumer branch from the previous branch's class-major
/// scores: soft-threshold mining or top-1, optionally refined by ICBC.
inline SeedSet mine_seeds(const Matrix& prev_scores, const PreparedImage& img, const RunConfig& cfg,
                          const Matrix* icbc_prob, SeedSet* base_out = nullptr) {
  SeedSet base = cfg.switches.igsm
                     ? mine_base_seeds(prev_scores, img.scene.labels, img.proposals, cfg.mining.alpha, cfg.mining.tau_nms)
                     : mine_top1_seeds(prev_scores, img.scene.labels, img.proposals);
  if (base_out) *base_out = base;
  if (icbc_prob && cfg.switches.icbc && cfg.switches.igsm_finetune)
    return icbc_finetune_seeds(base, img.proposals, *icbc_prob, cfg.mining.tau_sur);
  return base;
}

/// Forward, pseudo-label mining and analytic backward for one image. Adds the
/// gradients (times `grad_scale`) into `grads` when non-null. Mining consumes
/// detached scores; no gradient flows through seed selection.
template <typename Rng>
LossBreakdown image_step(const Model& m, const PreparedImage& img, const RunConfig& cfg, int iteration, Rng& rng,
                         ModelGrads* grads, double grad_scale = 1.0) {
  const std::size_t C = m.num_classes();
  const std::size_t T = m.stages();
  const Matrix& feat = img.features;
  LossBreakdown out(T);

  // MIDN
  const auto mid = midn_forward(head_scores(m.midn_cls, feat), head_scores(m.midn_det, feat));
  std::vector<double> class_weights(C, 1.0);
  if (cfg.switches.mct && iteration >= cfg.mct.warmup)
    class_weights = mct_weights(mid.x_img, img.scene.labels,
                                {cfg.mct.t_n, cfg.mct.a, cfg.mct.inclusive, cfg.mct.gated});
  const auto lm = midn_loss(mid.x_img, img.scene.labels, class_weights);
  detail::check_finite(lm.value, img, "midn");
  out.midn = lm.value;
  if (grads) {
    const auto g = midn_backward(mid, lm.grad);
    Matrix gc = transpose(g.x_cls), gd = transpose(g.x_det);
    for (double& v : gc.data()) v *= grad_scale;
    for (double& v : gd.data()) v *= grad_scale;
    linear_backward(feat, gc, grads->midn_cls);
    linear_backward(feat, gd, grads->midn_det);
  }

  if (iteration < cfg.optim.midn_warmup) {
    out.total = out.compose(cfg.loss.gamma);
    return out;
  }

  const MccAssignParams assign{cfg.sampling.tau_h, cfg.sampling.zero_overlap_uses_seed_confidence};
  const IcbcSamplingParams sampling{cfg.sampling.tau_l, cfg.sampling.tau_h, cfg.sampling.theta,
                                    cfg.sampling.grid_n, cfg.sampling.q,   cfg.switches.gridding};

  auto backprop = [&](const Matrix& grad_class_major, const Matrix& inputs, LinearGrads& into) {
    Matrix g = transpose(grad_class_major);
    for (double& v : g.data()) v *= grad_scale;
    linear_backward(inputs, g, into);
  };

  Matrix prev = mid.x_box;
  Matrix last_icbc;
  for (std::size_t t = 0; t < T; ++t) {
    const Matrix mcc_prob = softmax_over_classes(head_scores(m.mcc[t], feat));

    std::optional<IcbcScores> icbc_props;
    if (cfg.switches.icbc) icbc_props = icbc_forward(m.icbc[t], feat);

    SeedSet base;
    const SeedSet seeds = mine_seeds(prev, img, cfg, icbc_props ? &icbc_props->prob : nullptr, &base);

    const auto targets = assign_mcc_targets(img.proposals, seeds, C, assign);
    const auto lc = mcc_loss(mcc_prob, targets);
    detail::check_finite(lc.value, img, "mcc");
    out.mcc[t] = lc.value;
    if (grads) backprop(lc.grad, feat, grads->mcc[t]);

    if (cfg.switches.icbc) {
      const auto set = sample_icbc(img.proposals, base, C, sampling, rng, img.scene.bounds());
      const auto grid = set.grid_regions();
      const Matrix grid_feat = gen_features(img.scene, grid, cfg.data);
      Matrix ufeat(set.size(), feat.cols());
      std::size_t gi = 0;
      for (std::size_t u = 0; u < set.size(); ++u) {
        const auto& s = set.samples[u];
        const auto src = s.proposal_index >= 0 ? feat.row(static_cast<std::size_t>(s.proposal_index)) : grid_feat.row(gi++);
        std::copy(src.begin(), src.end(), ufeat.row(u).begin());
      }
      const auto us = icbc_forward(m.icbc[t], ufeat);
      const auto li = icbc_loss(us.prob, set);
      detail::check_finite(li.value, img, "icbc");
      out.icbc[t] = li.value;
      if (grads) {
        Matrix g = li.grad;
        for (double& v : g.data()) v *= cfg.loss.gamma;
        backprop(g, ufeat, grads->icbc[t]);
      }
      last_icbc = icbc_props->prob;
    }
    prev = mcc_prob;
  }

  // R-CNN, supervised by seeds mined from the last MCC stage
  const SeedSet rseeds = mine_seeds(prev, img, cfg, cfg.switches.icbc && T > 0 ? &last_icbc : nullptr);
  const auto rt = assign_rcnn_targets(img.proposals, rseeds, C, assign);
  const Matrix rcls = softmax_over_classes(head_scores(m.rcnn_cls, feat));
  const Matrix rreg = head_scores(m.rcnn_reg, feat);
  const auto lr = rcnn_loss(rcls, rreg, rt);
  detail::check_finite(lr.value, img, "rcnn");
  out.rcnn_cls = lr.cls_value;
  out.rcnn_reg = lr.reg_value;
  if (grads) {
    backprop(lr.grad_cls, feat, grads->rcnn_cls);
    backprop(lr.grad_reg, feat, grads->rcnn_reg);
  }

  out.total = out.compose(cfg.loss.gamma);
  return out;
}

/// Mini-batch SGD over the training split. Batches are drawn from a
/// per-epoch shuffle; gradients and losses are averaged over the batch.
class Trainer {
 public:
  Trainer(RunConfig cfg, const PreparedData& data)
      : cfg_(std::move(cfg)), data_(&data), model_(Model::create(cfg_)), rng_(cfg_.seed * 7919 + 3) {
    if (data.train.empty()) throw Error("Trainer: empty training split");
    order_.resize(data.train.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = order_.size();
  }

  const Model& model() const { return model_; }
  const RunConfig& config() const { return cfg_; }
  int iteration() const { return iteration_; }

  double current_lr() const {
    return iteration_ >= cfg_.optim.lr_drop_at ? cfg_.optim.lr * cfg_.optim.lr_drop_factor : cfg_.optim.lr;
  }

  StepLog step() {
    const int B = std::max(cfg_.optim.batch, 1);
    const double scale = 1.0 / B;
    ModelGrads grads(model_);
    LossBreakdown avg(model_.stages());
    for (int b = 0; b < B; ++b) {
      const auto& img = data_->train[next_index()];
      const auto l = image_step(model_, img, cfg_, iteration_, rng_, &grads, scale);
      avg.midn += scale * l.midn;
      for (std::size_t t = 0; t < l.mcc.size(); ++t) {
        avg.mcc[t] += scale * l.mcc[t];
        avg.icbc[t] += scale * l.icbc[t];
      }
      avg.rcnn_cls += scale * l.rcnn_cls;
      avg.rcnn_reg += scale * l.rcnn_reg;
    }
    avg.total = avg.compose(cfg_.loss.gamma);

    const SgdParams sgd{current_lr(), cfg_.optim.momentum, cfg_.optim.weight_decay};
    sgd_step(model_.midn_cls, grads.midn_cls, sgd);
    sgd_step(model_.midn_det, grads.midn_det, sgd);
    for (std::size_t t = 0; t < model_.stages(); ++t) {
      sgd_step(model_.mcc[t], grads.mcc[t], sgd);
      if (cfg_.switches.icbc) sgd_step(model_.icbc[t], grads.icbc[t], sgd);
    }
    sgd_step(model_.rcnn_cls, grads.rcnn_cls, sgd);
    sgd_step(model_.rcnn_reg, grads.rcnn_reg, sgd);

    StepLog log{iteration_, sgd.lr, avg};
    ++iteration_;
    return log;
  }

  /// Runs the remaining iterations; `on_step` sees every log entry.
  void run(const std::function<void(const StepLog&)>& on_step = {}) {
    while (iteration_ < cfg_.optim.iterations) {
      const auto log = step();
      if (on_step) on_step(log);
    }
  }

 private:
  std::size_t next_index() {
    if (cursor_ >= order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

  RunConfig cfg_;
  const PreparedData* data_;
  Model model_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int iteration_ = 0;
};

}  // namespace wsod

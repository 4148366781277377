#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "wsod/error.hpp"
#include "wsod/synthetic.hpp"

namespace wsod {

struct MiningConfig {
  double alpha = 0.9;
  double tau_nms = 0.1;
  double tau_sur = 0.5;
};

struct SamplingConfig {
  double tau_l = 0.1;
  double tau_h = 0.5;
  double theta = 0.5;
  int grid_n = 2;
  double q = 1.5;
  bool zero_overlap_uses_seed_confidence = true;
};

struct LossConfig {
  double gamma = 0.1;
  int stages = 3;  // T
};

struct SccConfig {
  double lambda = 0.01;
  double tau_midn = 0.001;
  bool empty_is_noop = true;
};

struct MctConfig {
  int t_n = 1;
  double a = 0.4;
  bool inclusive = false;
  bool gated = true;
  int warmup = 0;  // iterations before MCT weights apply
};

struct OptimConfig {
  double lr = 0.1;  // linear heads on frozen features need a larger step than a deep backbone
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch = 4;
  int iterations = 3000;
  int lr_drop_at = 2400;
  double lr_drop_factor = 0.1;
  double init_std = 0.01;
  int midn_warmup = 0;  // iterations of MIDN-only training before mining starts
};

struct InferenceConfig {
  double score_threshold = 1e-3;
  double nms_threshold = 0.3;
  bool all_point_ap = false;
  bool class_specific_regression = false;
};

/// Component switches for the ablation ladder.
struct Switches {
  bool icbc = true;           // ICBC branches trained
  bool igsm = true;           // soft-threshold + NMS seed mining (top-1 when off)
  bool igsm_finetune = true;  // ICBC-guided seed fine-tuning (needs icbc)
  bool gridding = true;       // gridding samples for ICBC
  bool scc = true;            // self-classification correction at inference
  bool mct = true;            // misclassification tolerance in the MIDN loss
};

struct RunConfig {
  std::uint64_t seed = 1;
  MiningConfig mining;
  SamplingConfig sampling;
  LossConfig loss;
  SccConfig scc;
  MctConfig mct;
  OptimConfig optim;
  InferenceConfig inference;
  Switches switches;
  DataParams data;
};

// -- JSON mapping -----------------------------------------------------------

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MiningConfig, alpha, tau_nms, tau_sur)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SamplingConfig, tau_l, tau_h, theta, grid_n, q, zero_overlap_uses_seed_confidence)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LossConfig, gamma, stages)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SccConfig, lambda, tau_midn, empty_is_noop)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MctConfig, t_n, a, inclusive, gated, warmup)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(OptimConfig, lr, momentum, weight_decay, batch, iterations, lr_drop_at,
                                   lr_drop_factor, init_std, midn_warmup)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(InferenceConfig, score_threshold, nms_threshold, all_point_ap,
                                   class_specific_regression)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Switches, icbc, igsm, igsm_finetune, gridding, scc, mct)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DataParams, num_classes, train_size, test_size, canvas, min_objects, max_objects,
                                   min_object_size, max_object_size, min_part_ratio, max_part_ratio,
                                   same_class_max_iou, placement_retries, part_strength, full_strength, min_part_saliency, noise_std,
                                   noise_dims, jitters_per_box, max_jitter, random_proposals, bridge_proposals)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunConfig, seed, mining, sampling, loss, scc, mct, optim, inference, switches,
                                   data)

namespace detail {

// Every key of `patch` must already exist in `base` with a compatible type.
inline void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& path) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    auto& dst = base[it.key()];
    if (dst.is_object()) {
      if (!it->is_object()) throw ConfigError("config key '" + key + "' must be a section");
      merge_strict(dst, *it, key);
    } else if (dst.is_boolean() != it->is_boolean() || dst.is_number() != it->is_number()) {
      throw ConfigError("config key '" + key + "' has the wrong type");
    } else if (dst.is_number_integer() && !it->is_number_integer()) {
      throw ConfigError("config key '" + key + "' must be an integer");
    } else {
      dst = *it;
    }
  }
}

}  // namespace detail

inline nlohmann::json config_to_json(const RunConfig& c) { return nlohmann::json(c); }

/// Applies a (possibly partial) JSON document on top of the defaults.
inline RunConfig config_from_json(const nlohmann::json& patch) {
  nlohmann::json base = config_to_json(RunConfig{});
  detail::merge_strict(base, patch, "");
  return base.get<RunConfig>();
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

/// Applies a `section.key=value` override. The value is parsed as JSON when
/// possible (numbers, booleans), otherwise taken as a string.
inline RunConfig apply_override(const RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = nlohmann::json{{*it, patch}};

  nlohmann::json base = config_to_json(cfg);
  detail::merge_strict(base, patch, "");
  try {
    return base.get<RunConfig>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("invalid value for config key '" + key + "'");
  }
}

/// Canonical text form: keys sorted, compact.
inline std::string canonical_config(const RunConfig& c) { return config_to_json(c).dump(); }

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out.push_back(hex[md[k] >> 4]);
    out.push_back(hex[md[k] & 0xf]);
  }
  return out;
}

inline std::string config_digest(const RunConfig& c) { return sha256_hex(canonical_config(c)); }

}  // namespace wsod

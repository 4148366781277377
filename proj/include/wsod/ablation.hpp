#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "wsod/config.hpp"
#include "wsod/pipeline.hpp"
#include "wsod/trainer.hpp"

namespace wsod {

struct AblationVariant {
  std::string name;
  RunConfig config;
};

/// baseline -> +ICBC -> +IGSM -> +SCC -> +MCT, each step toggling only its
/// own switches on top of the previous one.
inline std::vector<AblationVariant> ablation_ladder(const RunConfig& base) {
  RunConfig c = base;
  c.switches = Switches{false, false, false, base.switches.gridding, false, false};
  std::vector<AblationVariant> out;
  out.push_back({"baseline", c});
  c.switches.icbc = true;
  out.push_back({"+ICBC", c});
  c.switches.igsm = true;
  c.switches.igsm_finetune = true;
  out.push_back({"+IGSM", c});
  c.switches.scc = true;
  out.push_back({"+SCC", c});
  c.switches.mct = true;
  out.push_back({"+MCT", c});
  return out;
}

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string checkpoint_digest;
  double map = 0.0;
  double corloc = 0.0;
  std::optional<double> ilc;
  EvalReport report;
};

/// Digest of everything that influences training (SCC is inference-only).
inline std::string training_digest(RunConfig c) {
  c.switches.scc = false;
  c.inference = InferenceConfig{};
  return config_digest(c);
}

/// Trains and evaluates every ladder variant for each seed. Variants whose
/// training configuration coincides share one checkpoint.
inline std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  std::vector<AblationRow> rows;
  for (const auto seed : seeds) {
    RunConfig seeded = base;
    seeded.seed = seed;
    const PreparedData data = prepare_data(seeded);
    std::map<std::string, Model> trained;
    for (const auto& v : ablation_ladder(seeded)) {
      const auto key = training_digest(v.config);
      auto it = trained.find(key);
      if (it == trained.end()) {
        Trainer tr(v.config, data);
        tr.run();
        it = trained.emplace(key, tr.model()).first;
      }
      AblationRow row;
      row.variant = v.name;
      row.seed = seed;
      row.report = evaluate(it->second, data, v.config);
      row.config_digest = row.report.config_digest;
      row.checkpoint_digest = sha256_hex(checkpoint_bytes(it->second));
      row.map = row.report.map.map;
      row.corloc = row.report.corloc;
      row.ilc = row.report.ilc;
      if (on_row) on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = fmt::format("{:<10} {:>6} {:>8} {:>8} {:>8}  {}\n", "variant", "seed", "mAP", "CorLoc", "ILC",
                                "config");
  for (const auto& r : rows)
    out += fmt::format("{:<10} {:>6} {:>8.2f} {:>8.2f} {:>8} {}\n", r.variant, r.seed, 100.0 * r.map,
                       100.0 * r.corloc, r.ilc ? fmt::format("{:.2f}", 100.0 * *r.ilc) : std::string("n/a"),
                       r.config_digest.substr(0, 12));
  return out;
}

}  // namespace wsod

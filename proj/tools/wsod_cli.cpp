#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "suites.hpp"
#include "wsod/wsod.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumerical = 2, kCheckFailed = 3 };

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON config file (partial documents allowed)");
  cmd->add_option("--seed", c.seed, "Run seed (overrides the config)");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set mining.alpha=0.8")->take_all();
}

wsod::RunConfig resolve(const Common& c) {
  wsod::RunConfig cfg = c.config_path.empty() ? wsod::RunConfig{} : wsod::load_config(c.config_path);
  for (const auto& o : c.overrides) cfg = wsod::apply_override(cfg, o);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

fs::path out_dir(const Common& c) {
  fs::create_directories(c.out);
  return c.out;
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw wsod::Error("cannot write '" + p.string() + "'");
  os << bytes;
}

nlohmann::json box_json(const wsod::Box& b) { return {b.x1, b.y1, b.x2, b.y2}; }

std::string dataset_text(const wsod::PreparedData& data) {
  std::string out;
  for (const auto* split : {&data.train, &data.test})
    for (const auto& img : *split) {
      nlohmann::json objects = nlohmann::json::array();
      for (const auto& o : img.scene.objects)
        objects.push_back({{"class", o.cls},
                           {"extent", box_json(o.extent)},
                           {"part", box_json(o.part)},
                           {"part_saliency", o.part_saliency}});
      out += nlohmann::json{{"id", img.scene.id},
                            {"labels", img.scene.labels},
                            {"objects", objects},
                            {"proposals", img.proposals.size()},
                            {"feature_digest", wsod::sha256_hex(std::string_view(
                                                   reinterpret_cast<const char*>(img.features.data().data()),
                                                   img.features.size() * sizeof(double)))}}
                 .dump() +
             "\n";
    }
  return out;
}

int cmd_gen_data(const Common& c) {
  const auto cfg = resolve(c);
  const auto dir = out_dir(c);
  const std::string text = dataset_text(wsod::prepare_data(cfg));
  write_file(dir / "dataset.jsonl", text);
  write_file(dir / "config.json", wsod::config_to_json(cfg).dump(2) + "\n");
  std::cout << fmt::format("dataset {} config {}\n", wsod::sha256_hex(text), wsod::config_digest(cfg));
  return kOk;
}

int cmd_train(const Common& c) {
  const auto cfg = resolve(c);
  const auto dir = out_dir(c);
  const auto data = wsod::prepare_data(cfg);
  wsod::Trainer tr(cfg, data);
  std::ofstream log(dir / "train.log");
  log << nlohmann::json{{"config_digest", wsod::config_digest(cfg)}}.dump() << "\n";
  tr.run([&](const wsod::StepLog& s) {
    log << wsod::format_step_log(s) << "\n";
    if ((s.step + 1) % 500 == 0) spdlog::info("step {} total {:.4f}", s.step + 1, s.loss.total);
  });
  wsod::save_checkpoint((dir / "checkpoint.bin").string(), tr.model());
  write_file(dir / "config.json", wsod::config_to_json(cfg).dump(2) + "\n");
  std::cout << fmt::format("checkpoint {} config {}\n", wsod::sha256_hex(wsod::checkpoint_bytes(tr.model())),
                           wsod::config_digest(cfg));
  return kOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint, bool infer_only) {
  const auto cfg = resolve(c);
  const auto dir = out_dir(c);
  const auto model = wsod::load_checkpoint(checkpoint.empty() ? (dir / "checkpoint.bin").string() : checkpoint);
  if (model.stages() != static_cast<std::size_t>(cfg.loss.stages) ||
      model.num_classes() != static_cast<std::size_t>(cfg.data.num_classes))
    throw wsod::ConfigError("checkpoint does not match the configured stages/classes");
  const auto data = wsod::prepare_data(cfg);
  if (infer_only) {
    const auto dets = wsod::detect_split(model, data.test, cfg, cfg.switches.scc);
    write_file(dir / "detections.txt", wsod::format_detections(data.test, dets));
    return kOk;
  }
  const auto report = wsod::evaluate(model, data, cfg);
  write_file(dir / "detections.txt", wsod::format_detections(data.test, report.test_detections));
  write_file(dir / "metrics.json", wsod::format_metrics(report));
  std::cout << wsod::format_metrics(report);
  return kOk;
}

int cmd_ablate(const Common& c, const std::vector<std::uint64_t>& seeds) {
  const auto cfg = resolve(c);
  const auto dir = out_dir(c);
  std::ofstream docs(dir / "ablation.jsonl");
  const auto rows = wsod::run_ablation(cfg, seeds, [&](const wsod::AblationRow& r) {
    auto j = wsod::metrics_json(r.report);
    j["variant"] = r.variant;
    j["seed"] = r.seed;
    j["checkpoint_digest"] = r.checkpoint_digest;
    docs << j.dump() << "\n";
    docs.flush();
    spdlog::info("{} seed {}: mAP {:.2f}", r.variant, r.seed, 100.0 * r.map);
  });
  const std::string table = wsod::format_ablation_table(rows);
  write_file(dir / "ablation.txt", table);
  std::cout << table;
  return kOk;
}

int cmd_check() {
  const std::vector<suites::SuiteResult> results{suites::gradient_suite(100), suites::oracle_suite(1000),
                                                 suites::scc_law_suite(2000), suites::geometry_suite(10000),
                                                 suites::constants_check()};
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.passed;
    std::cout << fmt::format("{} {:<20} {:>6} cases {:>7.2f} s  {}\n", r.passed ? "PASS" : "FAIL", r.name, r.cases,
                             r.seconds, r.detail);
  }
  return ok ? kOk : kCheckFailed;
}

// ILC accuracy of test detections with and without SCC, sampled during
// training: "iteration ilc_without_scc ilc_with_scc" per line.
int cmd_plot_data(const Common& c, int every) {
  const auto cfg = resolve(c);
  const auto dir = out_dir(c);
  if (every <= 0) throw wsod::ConfigError("--every must be positive");
  const auto data = wsod::prepare_data(cfg);
  const auto labels = wsod::labels_of(data.test);
  wsod::Trainer tr(cfg, data);
  std::string out = fmt::format("# config {}\n# iteration ilc_without_scc ilc_with_scc\n", wsod::config_digest(cfg));
  auto sample = [&] {
    const auto plain = wsod::eval_ilc(wsod::detect_split(tr.model(), data.test, cfg, false), labels);
    const auto scc = wsod::eval_ilc(wsod::detect_split(tr.model(), data.test, cfg, true), labels);
    auto fmt_opt = [](const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : std::string("nan"); };
    out += fmt::format("{} {} {}\n", tr.iteration(), fmt_opt(plain), fmt_opt(scc));
  };
  tr.run([&](const wsod::StepLog& s) {
    if ((s.step + 1) % every == 0) sample();
  });
  write_file(dir / "ilc_series.txt", out);
  std::cout << out;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised detection on a synthetic benchmark"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress");

  Common common;
  std::string checkpoint;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int every = 100;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset and print its digest");
  auto* train = app.add_subcommand("train", "Train a model; writes checkpoint.bin and train.log");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; writes metrics.json and detections.txt");
  auto* infer = app.add_subcommand("infer", "Write test-split detections for a checkpoint");
  auto* ablate = app.add_subcommand("ablate", "Run the component ablation ladder");
  auto* check = app.add_subcommand("check", "Run the oracle and gradient suites");
  auto* plot = app.add_subcommand("plot-data", "ILC accuracy with and without SCC over training");
  for (auto* cmd : {gen, train, eval, infer, ablate, plot}) add_common(cmd, common);
  for (auto* cmd : {eval, infer}) cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default OUT/checkpoint.bin)");
  ablate->add_option("--seeds", seeds, "Seeds to run");
  plot->add_option("--every", every, "Sampling interval in iterations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);

  try {
    if (*gen) return cmd_gen_data(common);
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common, checkpoint, false);
    if (*infer) return cmd_eval(common, checkpoint, true);
    if (*ablate) return cmd_ablate(common, seeds);
    if (*check) return cmd_check();
    if (*plot) return cmd_plot_data(common, every);
  } catch (const wsod::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const wsod::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const wsod::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

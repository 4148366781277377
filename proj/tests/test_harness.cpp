#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "suites.hpp"
#include "wsod/wsod.hpp"

using wsod::Box;
using wsod::RunConfig;

namespace {

RunConfig small_config(int iterations = 20) {
  RunConfig c;
  c.data.train_size = 16;
  c.data.test_size = 8;
  c.optim.iterations = iterations;
  return c;
}

std::vector<std::string> run_logs(const RunConfig& cfg, const wsod::PreparedData& data) {
  wsod::Trainer tr(cfg, data);
  std::vector<std::string> out;
  tr.run([&](const wsod::StepLog& s) { out.push_back(wsod::format_step_log(s)); });
  return out;
}

// Flattened leaf values of a config, keyed by dotted path.
void flatten(const nlohmann::json& j, const std::string& prefix, std::map<std::string, std::string>& out) {
  if (!j.is_object()) {
    out[prefix] = j.dump();
    return;
  }
  for (auto it = j.begin(); it != j.end(); ++it) flatten(*it, prefix.empty() ? it.key() : prefix + "." + it.key(), out);
}

std::vector<std::string> differing_keys(const RunConfig& a, const RunConfig& b) {
  std::map<std::string, std::string> fa, fb;
  flatten(wsod::config_to_json(a), "", fa);
  flatten(wsod::config_to_json(b), "", fb);
  std::vector<std::string> out;
  for (const auto& [k, v] : fa)
    if (fb.at(k) != v) out.push_back(k);
  return out;
}

}  // namespace

TEST(SyntheticData, DeterministicPerSeed) {
  const auto p = small_config().data;
  const auto a = wsod::gen_dataset(p, 5), b = wsod::gen_dataset(p, 5), c = wsod::gen_dataset(p, 6);
  ASSERT_EQ(a.train.size(), 16u);
  ASSERT_EQ(a.test.size(), 8u);
  bool any_difference = false;
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].labels, b.train[i].labels);
    ASSERT_EQ(a.train[i].objects.size(), b.train[i].objects.size());
    for (std::size_t k = 0; k < a.train[i].objects.size(); ++k)
      EXPECT_EQ(a.train[i].objects[k].extent, b.train[i].objects[k].extent);
    EXPECT_EQ(wsod::gen_proposals(a.train[i], p, 5), wsod::gen_proposals(b.train[i], p, 5));
    EXPECT_EQ(wsod::gen_features(a.train[i], wsod::gen_proposals(a.train[i], p, 5), p),
              wsod::gen_features(b.train[i], wsod::gen_proposals(b.train[i], p, 5), p));
    any_difference |= a.train[i].objects.size() != c.train[i].objects.size() ||
                      !(a.train[i].objects[0].extent == c.train[i].objects[0].extent);
  }
  EXPECT_TRUE(any_difference);
}

TEST(SyntheticData, LabelsMatchObjects) {
  const auto d = wsod::gen_dataset(wsod::DataParams{}, 1);
  for (const auto& s : d.train) {
    wsod::Labels want(5, 0);
    for (const auto& o : s.objects) want[static_cast<std::size_t>(o.cls)] = 1;
    EXPECT_EQ(s.labels, want);
    EXPECT_FALSE(s.objects.empty());
    for (const auto& o : s.objects) {
      EXPECT_GT(wsod::intersection_area(o.part, o.extent), 0.0);
      EXPECT_EQ(wsod::intersection_area(o.part, o.extent), o.part.area());
      EXPECT_LT(o.part.area(), o.extent.area());
    }
  }
}

TEST(SyntheticData, ClassHistogramIsBalanced) {
  const auto d = wsod::gen_dataset(wsod::DataParams{}, 1);
  std::vector<double> count(5, 0.0);
  double total = 0.0;
  for (const auto* split : {&d.train, &d.test})
    for (const auto& s : *split)
      for (const auto& o : s.objects) {
        count[static_cast<std::size_t>(o.cls)] += 1.0;
        total += 1.0;
      }
  for (double c : count) {
    EXPECT_GT(c, 0.8 * total / 5.0);
    EXPECT_LT(c, 1.2 * total / 5.0);
  }
}

TEST(SyntheticData, ProposalsCoverEveryPartAndExtent) {
  const wsod::DataParams p;
  const auto d = wsod::gen_dataset(p, 2);
  for (const auto& s : d.train) {
    const auto props = wsod::gen_proposals(s, p, 2);
    for (const auto& o : s.objects)
      for (const Box& target : {o.part, o.extent}) {
        double best = 0.0;
        for (const Box& b : props) best = std::max(best, wsod::iou(b, target));
        EXPECT_GE(best, 0.7) << s.id;
      }
    for (const Box& b : props) {
      EXPECT_GE(b.x1, 0.0);
      EXPECT_LE(b.x2, s.width);
      EXPECT_GE(b.width(), 4.0);
    }
  }
}

TEST(SyntheticData, FeatureModelExamples) {
  wsod::DataParams p;
  p.min_part_saliency = 1.0;
  wsod::SyntheticScene s;
  s.id = "hand";
  s.key = 99;
  s.width = s.height = 256.0;
  s.objects.push_back({2, {100, 100, 200, 200}, {120, 120, 150, 150}, 1.0});
  s.labels = {0, 0, 1, 0, 0};
  const std::vector<Box> boxes{{0, 0, 40, 40}, {120, 120, 150, 150}, {100, 100, 200, 200}};
  const auto f = wsod::gen_features(s, boxes, p);
  ASSERT_EQ(f.cols(), wsod::feature_dim(p));
  ASSERT_EQ(f.cols(), 18u);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(f(0, k), 0.0);
  EXPECT_DOUBLE_EQ(f(1, 4), p.part_strength);
  EXPECT_DOUBLE_EQ(f(1, 5), 0.09 * p.full_strength);
  EXPECT_DOUBLE_EQ(f(2, 5), p.full_strength);
  EXPECT_DOUBLE_EQ(f(2, 4), 0.09 * p.part_strength);
}

TEST(SyntheticData, PartResponseScalesWithSaliency) {
  const wsod::DataParams p;
  wsod::SyntheticScene s;
  s.width = s.height = 256.0;
  s.objects.push_back({0, {100, 100, 200, 200}, {120, 120, 150, 150}, 0.35});
  s.labels = {1, 0, 0, 0, 0};
  const std::vector<Box> boxes{{120, 120, 150, 150}};
  EXPECT_DOUBLE_EQ(wsod::gen_features(s, boxes, p)(0, 0), 0.35 * p.part_strength);
}

TEST(Config, DefaultConstants) {
  const auto r = suites::constants_check(RunConfig{});
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Config, OverrideSetsNestedKey) {
  const auto c = wsod::apply_override(RunConfig{}, "mining.alpha=0.8");
  EXPECT_EQ(c.mining.alpha, 0.8);
  EXPECT_EQ(wsod::apply_override(c, "switches.scc=false").switches.scc, false);
  EXPECT_EQ(wsod::apply_override(c, "optim.iterations=7").optim.iterations, 7);
}

TEST(Config, StrictOverrides) {
  EXPECT_THROW(wsod::apply_override(RunConfig{}, "mining.nope=1"), wsod::ConfigError);
  EXPECT_THROW(wsod::apply_override(RunConfig{}, "optim.lr=fast"), wsod::ConfigError);
  EXPECT_THROW(wsod::apply_override(RunConfig{}, "optim.iterations=2.5"), wsod::ConfigError);
  EXPECT_THROW(wsod::apply_override(RunConfig{}, "switches.scc=1"), wsod::ConfigError);
  EXPECT_THROW(wsod::apply_override(RunConfig{}, "mining=3"), wsod::ConfigError);
  EXPECT_THROW(wsod::apply_override(RunConfig{}, "noequals"), wsod::ConfigError);
}

TEST(Config, JsonRoundTripAndPartialDocuments) {
  RunConfig c;
  c.scc.lambda = 0.5;
  EXPECT_EQ(wsod::config_digest(wsod::config_from_json(wsod::config_to_json(c))), wsod::config_digest(c));
  const auto partial = wsod::config_from_json(nlohmann::json{{"loss", {{"gamma", 0.3}}}});
  EXPECT_EQ(partial.loss.gamma, 0.3);
  EXPECT_EQ(partial.loss.stages, 3);
  EXPECT_THROW(wsod::config_from_json(nlohmann::json{{"bogus", 1}}), wsod::ConfigError);
}

TEST(Config, DigestIsStableAndSensitive) {
  const auto d = wsod::config_digest(RunConfig{});
  EXPECT_EQ(d.size(), 64u);
  EXPECT_EQ(d, wsod::config_digest(RunConfig{}));
  EXPECT_NE(d, wsod::config_digest(wsod::apply_override(RunConfig{}, "scc.lambda=0.02")));
}

TEST(Config, Sha256KnownVector) {
  EXPECT_EQ(wsod::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Training, ZeroLearningRateLeavesParametersUnchanged) {
  auto cfg = small_config(5);
  cfg.optim.lr = 0.0;
  const auto data = wsod::prepare_data(cfg);
  wsod::Trainer tr(cfg, data);
  tr.run();
  EXPECT_EQ(tr.iteration(), 5);
  EXPECT_TRUE(tr.model().same_parameters(wsod::Model::create(cfg)));
}

TEST(Training, SameSeedSameLog) {
  const auto cfg = small_config();
  const auto data = wsod::prepare_data(cfg);
  const auto a = run_logs(cfg, data), b = run_logs(cfg, data);
  ASSERT_EQ(a.size(), 20u);
  EXPECT_EQ(a, b);
  auto other = cfg;
  other.seed = 2;
  EXPECT_NE(a, run_logs(other, wsod::prepare_data(other)));
}

TEST(Training, TotalIsTheComposedLoss) {
  const auto cfg = small_config(10);
  const auto data = wsod::prepare_data(cfg);
  wsod::Trainer tr(cfg, data);
  for (int k = 0; k < 10; ++k) {
    const auto s = tr.step();
    double t = s.loss.midn + s.loss.rcnn_cls + s.loss.rcnn_reg;
    for (std::size_t j = 0; j < s.loss.mcc.size(); ++j) t += s.loss.mcc[j] + cfg.loss.gamma * s.loss.icbc[j];
    EXPECT_NEAR(s.loss.total, t, 1e-9);
    EXPECT_TRUE(std::isfinite(s.loss.total));
  }
}

TEST(Training, IcbcOffLeavesIcbcHeadsAtInit) {
  auto cfg = small_config(5);
  cfg.switches.icbc = false;
  cfg.switches.igsm_finetune = false;
  const auto data = wsod::prepare_data(cfg);
  wsod::Trainer tr(cfg, data);
  tr.run();
  const auto init = wsod::Model::create(cfg);
  for (std::size_t t = 0; t < init.stages(); ++t) EXPECT_EQ(tr.model().icbc[t].weights, init.icbc[t].weights);
}

TEST(Training, LossFallsOverTheFirstHundredIterations) {
  // Measured with the default configuration: the batch loss falls from about
  // 4.3 to about 3.4 and decreases step-on-step in a little over half of the
  // first 100 iterations, since every batch holds different images.
  auto cfg = RunConfig{};
  cfg.optim.iterations = 100;
  const auto data = wsod::prepare_data(cfg);
  std::vector<double> totals;
  wsod::Trainer tr(cfg, data);
  tr.run([&](const wsod::StepLog& s) { totals.push_back(s.loss.total); });
  ASSERT_EQ(totals.size(), 100u);
  double first = 0.0, last = 0.0;
  for (int k = 0; k < 10; ++k) {
    first += totals[k] / 10.0;
    last += totals[90 + k] / 10.0;
  }
  EXPECT_LT(last, 0.9 * first);
  int decreasing = 0;
  for (std::size_t k = 1; k < totals.size(); ++k) decreasing += totals[k] < totals[k - 1];
  EXPECT_GE(decreasing, 50);
}

TEST(Checkpoint, RoundTripAndMagic) {
  const auto cfg = small_config(3);
  const auto data = wsod::prepare_data(cfg);
  wsod::Trainer tr(cfg, data);
  tr.run();
  const std::string bytes = wsod::checkpoint_bytes(tr.model());
  EXPECT_EQ(bytes.substr(0, 8), "WSODCKP1");
  std::istringstream in(bytes);
  const auto back = wsod::read_checkpoint(in);
  EXPECT_TRUE(back.same_parameters(tr.model()));
  EXPECT_EQ(wsod::checkpoint_bytes(back), bytes);

  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream bad_in(bad);
  EXPECT_THROW(wsod::read_checkpoint(bad_in), wsod::Error);
}

TEST(Checkpoint, SccDoesNotAffectTraining) {
  auto on = small_config(10), off = small_config(10);
  off.switches.scc = false;
  const auto data = wsod::prepare_data(on);
  wsod::Trainer a(on, data), b(off, data);
  a.run();
  b.run();
  EXPECT_EQ(wsod::checkpoint_bytes(a.model()), wsod::checkpoint_bytes(b.model()));
  EXPECT_EQ(wsod::training_digest(on), wsod::training_digest(off));
  EXPECT_NE(wsod::config_digest(on), wsod::config_digest(off));
}

TEST(Ablation, LadderTogglesOneStepAtATime) {
  const auto ladder = wsod::ablation_ladder(RunConfig{});
  ASSERT_EQ(ladder.size(), 5u);
  const std::vector<std::string> names{"baseline", "+ICBC", "+IGSM", "+SCC", "+MCT"};
  const std::vector<std::vector<std::string>> toggled{
      {"switches.icbc"}, {"switches.igsm", "switches.igsm_finetune"}, {"switches.scc"}, {"switches.mct"}};
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(ladder[k].name, names[k]);
  for (std::size_t k = 1; k < 5; ++k) EXPECT_EQ(differing_keys(ladder[k - 1].config, ladder[k].config), toggled[k - 1]);
  EXPECT_EQ(wsod::config_digest(ladder[4].config), wsod::config_digest(RunConfig{}));
}

TEST(Ablation, RowsCarryDigestsAndShareCheckpoints) {
  auto cfg = small_config(4);
  const auto rows = wsod::run_ablation(cfg, {1});
  ASSERT_EQ(rows.size(), 5u);
  std::set<std::string> digests;
  for (const auto& r : rows) {
    digests.insert(r.config_digest);
    EXPECT_EQ(r.checkpoint_digest.size(), 64u);
  }
  EXPECT_EQ(digests.size(), 5u);
  EXPECT_EQ(rows[2].checkpoint_digest, rows[3].checkpoint_digest);
  EXPECT_NE(rows[3].checkpoint_digest, rows[4].checkpoint_digest);
}

TEST(Output, DetectionAndMetricFormats) {
  const auto cfg = small_config(3);
  const auto data = wsod::prepare_data(cfg);
  wsod::Trainer tr(cfg, data);
  tr.run();
  const auto report = wsod::evaluate(tr.model(), data, cfg);
  const std::string text = wsod::format_detections(data.test, report.test_detections);
  std::istringstream lines(text);
  std::string line, prev_key;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    std::istringstream fields(line);
    std::string id;
    int cls;
    double score, x1, y1, x2, y2;
    ASSERT_TRUE(fields >> id >> cls >> score >> x1 >> y1 >> x2 >> y2) << line;
    EXPECT_TRUE(id.rfind("test_", 0) == 0);
    EXPECT_GE(cls, 0);
    EXPECT_LT(cls, 5);
    EXPECT_LE(x1, x2);
    const std::string key = id + "/" + std::to_string(cls);
    EXPECT_GE(key, prev_key);
    prev_key = key;
    ++n;
  }
  std::size_t total = 0;
  for (const auto& d : report.test_detections) total += d.size();
  EXPECT_EQ(n, total);

  const auto j = nlohmann::json::parse(wsod::format_metrics(report));
  EXPECT_EQ(j.at("config_digest"), wsod::config_digest(cfg));
  EXPECT_EQ(j.at("per_class_ap").size(), 5u);
  EXPECT_TRUE(j.at("map").is_number());
  EXPECT_TRUE(j.at("corloc").is_number());
}

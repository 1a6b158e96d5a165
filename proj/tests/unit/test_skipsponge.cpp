#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "oracle.hpp"
#include "sponge/errors.hpp"
#include "sponge/skipsponge.hpp"

using namespace sponge;

namespace {

Dataset labelled(Tensor x, std::vector<int> labels) {
  Manifest m;
  m.name = "crafted";
  m.sample_shape = Shape(x.shape().begin() + 1, x.shape().end());
  m.splits["all"] = x.dim(0);
  return Dataset(std::move(x), std::move(labels), std::move(m));
}

ActivationProfile single_layer_profile(std::vector<BiasStats> stats) {
  ActivationProfile p;
  p.layers.push_back({"d", "r", "d.bias", std::move(stats)});
  return p;
}

const fixtures::BlobCnn& cnn() { return fixtures::blob_cnn(); }

Evaluator cnn_evaluator() { return Evaluator(cnn().subset, Task::classification, 64, {}); }

}  // namespace

TEST(AttackConfig, Validation) {
  AttackConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.step_cap(), 4u);
  c.alpha = 0.75;
  EXPECT_EQ(c.step_cap(), 3u);
  c.max_steps_per_bias = 7;
  EXPECT_EQ(c.step_cap(), 7u);
  c.tau = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AttackConfig{};
  c.alpha = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AttackConfig{};
  c.subset_fraction = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SkipSponge, CraftedStepMatchesOracle) {
  // pre-activation of channel 0 is x - 1; three samples lie within 0.5 of zero
  ModelGraph m = ModelBuilder({1}, 1).dense("d", 2).relu("r").build();
  m.set_parameter("d.weight", Tensor({2, 1}, std::vector<float>{1, 0}));
  m.set_parameter("d.bias", Tensor({2}, std::vector<float>{-1, -5}));
  const Tensor x({8, 1}, std::vector<float>{0.6f, 0.7f, 0.8f, 0.0f, 0.1f, 0.2f, 0.3f, 0.4f});
  const Evaluator eval(labelled(x, std::vector<int>(8, 0)), Task::classification, 8, {});
  AttackConfig cfg;
  cfg.alpha = 0.5;
  cfg.max_steps_per_bias = 1;
  cfg.tau = 0;
  const auto prof = single_layer_profile({{"d", 0, -1.0, 1.0, 8}, {"d", 1, -5.0, 0.0, 8}});
  const AttackResult r = run_skipsponge(m, prof, cfg, eval);
  ASSERT_EQ(r.trace.size(), 1u);  // channel 1 has zero spread and is skipped
  const auto& e = r.trace[0];
  EXPECT_FALSE(e.reverted);
  EXPECT_EQ(e.channel, 0u);
  EXPECT_EQ(e.old_bias, -1.0f);
  EXPECT_EQ(e.new_bias, -0.5f);
  std::size_t fired = 0;
  const Tensor out = forward(r.model, x);
  for (float v : out.data()) fired += v > 0.0f;
  EXPECT_EQ(fired, 3u);
  const auto tally = oracle::enumerate(r.model, forward_all(r.model, x));
  EXPECT_NEAR(e.energy_ratio_after, oracle::average(tally, {}) / oracle::worst(tally, {}), 1e-12);
  EXPECT_GT(e.energy_ratio_after, r.start_ratio);
  EXPECT_EQ(r.final_ratio, e.energy_ratio_after);
}

TEST(SkipSponge, ZeroTauEveryBumpFlipsPrediction) {
  // logits [h, 0.05]: the sample with h = 0.04 flips class under any bump of 0.01 or more
  ModelGraph m = ModelBuilder({1}, 1).dense("d", 1).relu("r").dense("o", 2).build();
  m.set_parameter("d.weight", Tensor({1, 1}, 1.0f));
  m.set_parameter("d.bias", Tensor({1}, 0.0f));
  m.set_parameter("o.weight", Tensor({2, 1}, std::vector<float>{1, 0}));
  m.set_parameter("o.bias", Tensor({2}, std::vector<float>{0, 0.05f}));
  const Tensor x({4, 1}, std::vector<float>{0.04f, 0.5f, -0.5f, 1.0f});
  const Dataset d = labelled(x, {1, 0, 1, 0});
  const Evaluator eval(d, Task::classification, 4, {});
  ASSERT_EQ(eval.performance(m), 1.0);
  AttackConfig cfg;
  cfg.tau = 0;
  cfg.alpha = 0.25;
  const AttackResult r = run_skipsponge(m, profile(m, x), cfg, eval);
  ASSERT_FALSE(r.trace.empty());
  for (const auto& e : r.trace) EXPECT_TRUE(e.reverted);
  EXPECT_EQ(r.accepted_steps(), 0u);
  EXPECT_TRUE(r.model.bit_equal(m));
}

TEST(SkipSponge, SaturatedModelGainsNothing) {
  ModelGraph m = ModelBuilder({3}, 1).dense("d", 4).relu("r").dense("o", 2).build();
  m.set_parameter("d.weight", Tensor({4, 3}, 0.5f));
  m.set_parameter("d.bias", Tensor({4}, 0.1f));
  const Tensor x = fixtures::random_tensor({6, 3}, 3, 0.1, 1.0);
  const Dataset d = labelled(x, argmax_rows(forward(m, x)));
  const Evaluator eval(d, Task::classification, 6, {});
  ASSERT_EQ(eval(m).mean_ratio, 1.0);
  const AttackResult r = run_skipsponge(m, profile(m, x), AttackConfig{}, eval);
  EXPECT_EQ(r.accepted_steps(), 0u);
  EXPECT_TRUE(r.model.bit_equal(m));
}

TEST(SkipSponge, BlobCnnInvariants) {
  AttackConfig cfg;
  const AttackResult r = run_skipsponge(cnn().clean, cnn().profile, cfg, cnn_evaluator());
  EXPECT_GT(r.accepted_steps(), 0u);
  EXPECT_FALSE(r.abort_reason);
  double prev = r.start_ratio;
  std::map<std::pair<std::string, std::size_t>, std::size_t> steps;
  for (const auto& e : r.trace) {
    if (e.reverted) continue;
    EXPECT_GT(e.energy_ratio_after, prev);
    prev = e.energy_ratio_after;
    EXPECT_LE(drop_points(r.clean_performance, e.performance_after), cfg.tau + 1e-9);
    EXPECT_GT(e.new_bias, e.old_bias);
    ++steps[{e.layer, e.channel}];
  }
  for (const auto& [key, n] : steps) EXPECT_LE(n, cfg.step_cap());
  EXPECT_LE(drop_points(r.clean_performance, r.final_performance), cfg.tau + 1e-9);
  EXPECT_EQ(r.final_ratio, prev);
  ASSERT_EQ(r.layers.size(), 2u);
  EXPECT_EQ(r.layers[0].layer, "conv1");
  EXPECT_EQ(r.layers[1].layer, "conv2");
}

TEST(SkipSponge, OnlyTargetBiasesChange) {
  const AttackResult r = run_skipsponge(cnn().clean, cnn().profile, AttackConfig{}, cnn_evaluator());
  const auto targets = identify_target_layers(cnn().clean);
  std::set<std::string> biases;
  for (const auto& p : targets.pairs) biases.insert(p.bias_tensor);
  bool any = false;
  for (const auto& [name, t] : cnn().clean.parameters()) {
    const bool same = t.values() == r.model.parameter(name).values();
    if (!biases.count(name)) EXPECT_TRUE(same) << name;
    any |= !same;
  }
  EXPECT_TRUE(any);
}

TEST(SkipSponge, Deterministic) {
  const AttackResult a = run_skipsponge(cnn().clean, cnn().profile, AttackConfig{}, cnn_evaluator());
  const AttackResult b = run_skipsponge(cnn().clean, cnn().profile, AttackConfig{}, cnn_evaluator());
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_TRUE(a.model.bit_equal(b.model));
}

TEST(SkipSponge, ReplayReproducesModel) {
  const AttackResult r = run_skipsponge(cnn().clean, cnn().profile, AttackConfig{}, cnn_evaluator());
  EXPECT_TRUE(replay_trace(cnn().clean, r.trace).bit_equal(r.model));
  EXPECT_TRUE(replay_trace(cnn().clean, r.trace, 0).bit_equal(cnn().clean));
  const ModelGraph partial = replay_trace(cnn().clean, r.trace, 1);
  const TraceEntry* first = nullptr;
  for (const auto& e : r.trace)
    if (!e.reverted && !first) first = &e;
  ASSERT_NE(first, nullptr);
  EXPECT_EQ(cnn_evaluator()(partial).mean_ratio, first->energy_ratio_after);
  std::vector<TraceEntry> bad{{"nope", 0, 0, 1, 0, 0, false}};
  EXPECT_THROW(replay_trace(cnn().clean, bad), ConfigError);
  bad[0] = {"conv1", 99, 0, 1, 0, 0, false};
  EXPECT_THROW(replay_trace(cnn().clean, bad), ConfigError);
}

TEST(SkipSponge, ProfileMismatch) {
  const ModelGraph other = ModelBuilder({3}, 1).dense("d", 2).relu("r").build();
  const auto wrong = profile(other, Tensor({2, 3}, 1.0f));
  EXPECT_THROW(run_skipsponge(cnn().clean, wrong, AttackConfig{}, cnn_evaluator()), ConfigError);
  ActivationProfile short_layer = cnn().profile;
  short_layer.layers[0].stats.pop_back();
  EXPECT_THROW(run_skipsponge(cnn().clean, short_layer, AttackConfig{}, cnn_evaluator()), ConfigError);
}

TEST(SkipSponge, NonFiniteEvaluationAborts) {
  // once the hidden unit exceeds about 1.13 the two huge logits overflow to +inf and -inf and their sum is NaN
  ModelGraph m = ModelBuilder({1, 1}, 1).dense("d", 1).relu("r").dense("o1", 2).dense("o2", 1).build();
  m.set_parameter("d.weight", Tensor({1, 1}, 1.0f));
  m.set_parameter("d.bias", Tensor({1}, 0.0f));
  m.set_parameter("o1.weight", Tensor({2, 1}, std::vector<float>{3e38f, -3e38f}));
  m.set_parameter("o1.bias", Tensor({2}, 0.0f));
  m.set_parameter("o2.weight", Tensor({1, 2}, 1.0f));
  m.set_parameter("o2.bias", Tensor({1}, 0.0f));
  const Tensor x({4, 1, 1}, std::vector<float>{0.5f, 0.9f, -0.3f, 1.0f});
  Dataset d = labelled(x, {0, 0, 0, 0});
  const Evaluator eval(d, Task::reconstruction, 4, {}, &m);
  AttackConfig cfg;
  cfg.task = Task::reconstruction;
  cfg.alpha = 2.0;
  cfg.tau = 100;
  const AttackResult r = run_skipsponge(m, profile(m, x), cfg, eval);
  ASSERT_TRUE(r.abort_reason.has_value());
  EXPECT_NE(r.abort_reason->find("d[0]"), std::string::npos);
  EXPECT_TRUE(r.model.bit_equal(m));
  ASSERT_FALSE(r.trace.empty());
  EXPECT_TRUE(r.trace.back().reverted);
}

TEST(Evaluation, ReconstructionNeedsReference) {
  const ModelGraph m = ModelBuilder({1, 2, 2}, 1).dense("d", 4).build();
  const Dataset d = labelled(fixtures::random_tensor({3, 1, 2, 2}, 1, 0, 1), {0, 0, 0});
  EXPECT_THROW(Evaluator(d, Task::reconstruction, 4, {}), ConfigError);
  EXPECT_THROW(evaluate_performance(m, d, Task::reconstruction), ConfigError);
  EXPECT_DOUBLE_EQ(evaluate_performance(m, d, Task::reconstruction, &m), 1.0);
}

TEST(Evaluation, HandCountedAccuracy) {
  ModelGraph m = ModelBuilder({2}, 1).dense("d", 2).build();
  m.set_parameter("d.weight", Tensor({2, 2}, std::vector<float>{1, 0, 0, 1}));
  m.set_parameter("d.bias", Tensor({2}, 0.0f));
  // predicted class is the larger coordinate
  const Tensor x({10, 2}, std::vector<float>{1, 0, 0, 1, 2, 1, 1, 2, 3, 0, 0, 3, 5, 4, 4, 5, 1, 9, 9, 1});
  const std::vector<int> labels{0, 1, 0, 0, 0, 1, 1, 1, 0, 0};  // 7 correct
  EXPECT_DOUBLE_EQ(evaluate_performance(m, labelled(x, labels), Task::classification, nullptr, 3), 0.7);
  EXPECT_DOUBLE_EQ(evaluate_performance(m, labelled(x, argmax_rows(forward(m, x))), Task::classification), 1.0);
}

TEST(Trace, JsonAndCsv) {
  const AttackResult r = run_skipsponge(cnn().clean, cnn().profile, AttackConfig{}, cnn_evaluator());
  const nlohmann::json j = r;
  EXPECT_EQ(j["trace"].size(), r.trace.size());
  EXPECT_TRUE(j["abort_reason"].is_null());
  std::ostringstream trace_csv, layer_csv;
  write_trace_csv(trace_csv, r.trace);
  write_layer_series_csv(layer_csv, r.layers);
  std::size_t lines = 0;
  for (char c : trace_csv.str()) lines += c == '\n';
  EXPECT_EQ(lines, r.trace.size() + 1);
  lines = 0;
  for (char c : layer_csv.str()) lines += c == '\n';
  EXPECT_EQ(lines, r.layers.size() + 1);
}

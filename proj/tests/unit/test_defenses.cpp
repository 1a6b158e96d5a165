#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "sponge/defenses.hpp"
#include "sponge/errors.hpp"
#include "sponge/skipsponge.hpp"

using namespace sponge;

namespace {

const fixtures::BlobCnn& cnn() { return fixtures::blob_cnn(); }

const ModelGraph& attacked() {
  static const ModelGraph m = [] {
    const Evaluator eval(cnn().subset, Task::classification, 64, {});
    return run_skipsponge(cnn().clean, cnn().profile, AttackConfig{}, eval).model;
  }();
  return m;
}

Evaluator test_evaluator() { return Evaluator(cnn().data.test, Task::classification, 200, {}); }

std::set<std::string> changed_tensors(const ModelGraph& a, const ModelGraph& b) {
  std::set<std::string> out;
  for (const auto& [name, t] : a.parameters())
    if (t.values() != b.parameter(name).values()) out.insert(name);
  return out;
}

std::set<std::string> conv_weight_names(const ModelGraph& m) {
  const auto v = m.parameter_names(role::weight, LayerKind::conv2d);
  return {v.begin(), v.end()};
}

std::set<std::string> target_bias_names(const ModelGraph& m) {
  std::set<std::string> out;
  for (const auto& p : identify_target_layers(m).pairs) out.insert(p.bias_tensor);
  return out;
}

bool subset_of(const std::set<std::string>& a, const std::set<std::string>& b) {
  for (const auto& x : a)
    if (!b.count(x)) return false;
  return true;
}

double param_norm(const ModelGraph& m) {
  double s = 0;
  for (const auto& [name, t] : m.parameters()) {
    if (name.find("running") != std::string::npos) continue;
    for (float v : t.data()) s += double(v) * v;
  }
  return std::sqrt(s);
}

}  // namespace

TEST(Transforms, ZeroStrengthNoiseIsIdentity) {
  Rng rng(1);
  EXPECT_TRUE(perturb_conv_weights(attacked(), 0.0, rng).bit_equal(attacked()));
  EXPECT_TRUE(perturb_target_biases_negative(attacked(), 0.0, rng).bit_equal(attacked()));
  const auto o = noise_weights(attacked(), 0.0, 5, 3, test_evaluator());
  EXPECT_EQ(o.ratio_after, o.ratio_before);
  EXPECT_EQ(o.performance_after, o.performance_before);
}

TEST(Transforms, NoiseTouchesOnlyItsTensors) {
  Rng rng(2);
  const ModelGraph w = perturb_conv_weights(attacked(), 0.5, rng);
  EXPECT_EQ(changed_tensors(attacked(), w), conv_weight_names(attacked()));
  const ModelGraph b = perturb_target_biases_negative(attacked(), 0.5, rng);
  EXPECT_EQ(changed_tensors(attacked(), b), target_bias_names(attacked()));
}

TEST(Transforms, NegativeBiasNoiseStrictlyDecreases) {
  for (double strength : {1e-9, 1e-3, 1.0}) {
    Rng rng(3);
    const ModelGraph b = perturb_target_biases_negative(attacked(), strength, rng);
    for (const auto& name : target_bias_names(attacked())) {
      const Tensor& before = attacked().parameter(name);
      const Tensor& after = b.parameter(name);
      for (std::size_t i = 0; i < before.numel(); ++i) EXPECT_LT(after[i], before[i]) << name << "[" << i << "]";
    }
  }
}

TEST(Transforms, WeightClipOracle) {
  EXPECT_TRUE(clip_conv_weights(attacked(), 1.0).bit_equal(attacked()));
  const ModelGraph half = clip_conv_weights(attacked(), 0.5);
  for (const auto& name : conv_weight_names(attacked())) {
    const Tensor& w = attacked().parameter(name);
    float lo = w[0], hi = w[0];
    for (float v : w.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const float clo = float(0.5 * lo), chi = float(0.5 * hi);
    for (std::size_t i = 0; i < w.numel(); ++i) EXPECT_EQ(half.parameter(name)[i], std::clamp(w[i], clo, chi));
  }
  const ModelGraph tiny = clip_conv_weights(attacked(), 1e-12);
  for (const auto& name : conv_weight_names(attacked()))
    for (float v : tiny.parameter(name).data()) EXPECT_LT(std::abs(v), 1e-10f);
  EXPECT_TRUE(subset_of(changed_tensors(attacked(), half), conv_weight_names(attacked())));
  EXPECT_THROW(clip_conv_weights(attacked(), 0.0), DomainError);
  EXPECT_THROW(clip_conv_weights(attacked(), 1.5), DomainError);
}

TEST(Transforms, PositiveBiasClip) {
  EXPECT_TRUE(clip_target_biases_positive(attacked(), 1.0).bit_equal(attacked()));
  ModelGraph m = ModelBuilder({3}, 1).dense("d", 4).relu("r").dense("e", 3).relu("q").build();
  m.set_parameter("d.bias", Tensor({4}, std::vector<float>{-1, -0.5f, -2, -0.1f}));
  m.set_parameter("e.bias", Tensor({3}, std::vector<float>{2, -1, 1}));
  for (double s : {0.9, 0.3, 0.01}) {
    const ModelGraph c = clip_target_biases_positive(m, s);
    EXPECT_EQ(c.parameter("d.bias").values(), m.parameter("d.bias").values());
    EXPECT_EQ(c.parameter("e.bias").values(),
              (std::vector<float>{float(s * 2.0), -1.0f, std::min(1.0f, float(s * 2.0))}));
  }
  EXPECT_TRUE(subset_of(changed_tensors(attacked(), clip_target_biases_positive(attacked(), 0.3)),
                        target_bias_names(attacked())));
}

TEST(Transforms, PruneRates) {
  EXPECT_TRUE(prune_target_biases(attacked(), 0.0).bit_equal(attacked()));
  const ModelGraph all = prune_target_biases(attacked(), 1.0);
  for (const auto& name : target_bias_names(attacked())) {
    const Tensor& before = attacked().parameter(name);
    for (std::size_t i = 0; i < before.numel(); ++i)
      EXPECT_EQ(all.parameter(name)[i], before[i] > 0.0f ? 0.0f : before[i]);
  }
  ModelGraph m = ModelBuilder({3}, 1).dense("d", 4).relu("r").build();
  m.set_parameter("d.bias", Tensor({4}, std::vector<float>{0.4f, -1, 0.9f, 0.1f}));
  EXPECT_EQ(prune_target_biases(m, 0.5).parameter("d.bias").values(), (std::vector<float>{0.4f, -1, 0, 0.1f}));
  m.set_parameter("d.bias", Tensor({4}, -1.0f));
  std::vector<std::string> warnings;
  EXPECT_TRUE(prune_target_biases(m, 1.0, &warnings).bit_equal(m));
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Transforms, InputModelNeverModified) {
  const ModelGraph copy = attacked();
  Rng rng(4);
  perturb_conv_weights(copy, 1.0, rng);
  perturb_target_biases_negative(copy, 1.0, rng);
  clip_conv_weights(copy, 0.2);
  clip_target_biases_positive(copy, 0.2);
  prune_target_biases(copy, 0.7);
  EXPECT_TRUE(copy.bit_equal(attacked()));
}

TEST(Defenses, InapplicableWithoutConv) {
  const ModelGraph mlp = fixtures::blob_mlp().init;
  Rng rng(1);
  EXPECT_THROW(perturb_conv_weights(mlp, 0.1, rng), InapplicableError);
  EXPECT_THROW(clip_conv_weights(mlp, 0.5), InapplicableError);
  const Evaluator eval(fixtures::blob_mlp().data.test, Task::classification, 200, {});
  EXPECT_THROW(noise_weights(mlp, 0.1, 5, 1, eval), InapplicableError);
  EXPECT_THROW(search_noise_weights(mlp, eval, SearchSchedule{}, 1), InapplicableError);
}

TEST(Defenses, StochasticOutcomesAreReproducible) {
  const auto a = noise_weights(attacked(), 0.3, 5, 9, test_evaluator());
  const auto b = noise_weights(attacked(), 0.3, 5, 9, test_evaluator());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.trials, 5u);
  const auto c = noise_biases_negative(attacked(), 0.3, 5, 9, test_evaluator());
  EXPECT_EQ(c, noise_biases_negative(attacked(), 0.3, 5, 9, test_evaluator()));
}

TEST(Defenses, TrialsAreAveraged) {
  const Evaluator eval = test_evaluator();
  const auto o = noise_biases_negative(attacked(), 0.5, 3, 11, eval);
  double ratio = 0, perf = 0;
  for (std::uint64_t t = 0; t < 3; ++t) {
    Rng rng(derive_seed(11, std::string(to_string(DefenseKind::bias_noise)) + "-trial-" + std::to_string(t)));
    const Evaluation e = eval(perturb_target_biases_negative(attacked(), 0.5, rng));
    ratio += e.mean_ratio;
    perf += e.performance;
  }
  EXPECT_NEAR(o.ratio_after, ratio / 3.0, 1e-12);
  EXPECT_NEAR(o.performance_after, perf / 3.0, 1e-12);
}

TEST(Defenses, AdaptedBiasNoiseLowersRatio) {
  const auto o = noise_biases_negative(attacked(), 2.0, 5, 1, test_evaluator());
  EXPECT_LT(o.ratio_after, o.ratio_before);
}

TEST(Defenses, SearchesRespectBound) {
  const Evaluator eval = test_evaluator();
  SearchSchedule sched;
  sched.noise_trials = 2;
  for (const auto& rows : {search_noise_biases(attacked(), eval, sched, 5), search_clip_weights(attacked(), eval, sched),
                           search_clip_biases(attacked(), eval, sched)}) {
    ASSERT_FALSE(rows.empty());
    std::size_t accepted = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      EXPECT_EQ(rows[i].ratio_before, rows[0].ratio_before);
      if (rows[i].accepted) {
        ++accepted;
        EXPECT_LE(rows[i].drop_points(), sched.max_drop);
      }
      if (i + 1 < rows.size()) EXPECT_LE(rows[i].drop_points(), sched.max_drop);
    }
    EXPECT_LE(accepted, 1u);
  }
}

TEST(Defenses, ClipSearchScheduleAndRestart) {
  const Evaluator eval = test_evaluator();
  const auto rows = search_clip_biases(attacked(), eval, SearchSchedule{});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_NEAR(rows[i].strength, 1.0 - 0.05 * double(i), 1e-12);
    // restarting from the attacked model means each row equals a direct application at that strength
    const auto direct = clip_biases_positive(attacked(), rows[i].strength, eval);
    EXPECT_EQ(rows[i].ratio_after, direct.ratio_after);
  }
}

TEST(FineTune, PruneRateZeroIsPlainFineTuning) {
  TrainConfig tc = cnn().train;
  tc.epochs = retrain_epochs(cnn().train.epochs);
  const auto pruned = fine_prune_biases(attacked(), 0.0, cnn().data.train, tc, test_evaluator());
  const TrainResult plain = train(attacked(), cnn().data.train, tc);
  EXPECT_TRUE(pruned.model.bit_equal(plain.model));
  const auto l2zero = finetune_l2(attacked(), 0.0, cnn().data.train, tc, test_evaluator());
  EXPECT_TRUE(l2zero.model.bit_equal(plain.model));
}

TEST(FineTune, LargeDecayShrinksNormEachStep) {
  const auto& mlp = fixtures::blob_mlp();
  const std::size_t idx[] = {0, 1, 2, 3, 4, 5, 6, 7};
  const Dataset batch = take(mlp.data.train, idx);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.learning_rate = 0.01;
  tc.momentum = 0.0;
  tc.weight_decay = 50.0;
  double prev = param_norm(mlp.init);
  for (std::size_t steps = 1; steps <= 5; ++steps) {
    tc.epochs = steps;
    const double now = param_norm(train(mlp.init, batch, tc).model);
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(FineTune, DivergenceIsRecordedNotThrown) {
  TrainConfig tc = cnn().train;
  tc.epochs = 1;
  tc.learning_rate = 1e30;
  const auto r = finetune_l2(attacked(), 1e-3, cnn().data.train, tc, test_evaluator());
  EXPECT_TRUE(r.outcome.failed);
  EXPECT_FALSE(r.outcome.note.empty());
}

TEST(Defenses, RetrainEpochs) {
  EXPECT_EQ(retrain_epochs(10), 1u);
  EXPECT_EQ(retrain_epochs(20), 1u);
  EXPECT_EQ(retrain_epochs(30), 2u);
  EXPECT_EQ(retrain_epochs(100), 5u);
  EXPECT_EQ(retrain_epochs(1), 1u);
}

TEST(Defenses, KindNamesAndCsv) {
  for (auto k : {DefenseKind::weight_noise, DefenseKind::bias_noise, DefenseKind::weight_clip, DefenseKind::bias_clip,
                 DefenseKind::fine_prune, DefenseKind::l2_finetune})
    EXPECT_EQ(defense_kind_from_string(to_string(k)), k);
  EXPECT_THROW(defense_kind_from_string("nope"), ConfigError);
  std::vector<DefenseOutcome> rows(2);
  rows[1].applicable = false;
  std::ostringstream csv;
  write_defense_csv(csv, rows);
  std::size_t lines = 0;
  for (char c : csv.str()) lines += c == '\n';
  EXPECT_EQ(lines, 3u);
  EXPECT_NE(csv.str().find('-'), std::string::npos);
}

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "sponge/datasets.hpp"
#include "sponge/evaluation.hpp"
#include "sponge/model.hpp"
#include "sponge/poison.hpp"

namespace sponge {

enum class DefenseKind { weight_noise, bias_noise, weight_clip, bias_clip, fine_prune, l2_finetune };

std::string_view to_string(DefenseKind kind);
DefenseKind defense_kind_from_string(std::string_view text);

struct DefenseOutcome {
  DefenseKind kind = DefenseKind::weight_noise;
  double strength = 0.0;
  std::size_t trials = 1;
  double performance_before = 0.0;
  double performance_after = 0.0;
  double ratio_before = 0.0;
  double ratio_after = 0.0;
  bool accepted = false;   // the strength the search settled on
  bool applicable = true;  // false reproduces a '-' table cell
  bool failed = false;     // training diverged at this grid point
  std::string note;

  double drop_points() const { return 100.0 * (performance_before - performance_after); }
  bool operator==(const DefenseOutcome&) const = default;
};

// Largest allowed performance drop of a search, in points.
inline constexpr double kMaxDefenseDrop = 5.0;

// ---- parameter transforms (pure; the input model is never modified) ----

// Adds N(0, (strength * std_l)^2) to every conv weight, where std_l is the
// population std of that layer's weights. InapplicableError without conv layers.
ModelGraph perturb_conv_weights(const ModelGraph& model, double strength, Rng& rng);

// Subtracts |N(0, (strength * scale_l)^2)| from every target-layer bias, where
// scale_l is the std of that bias vector (its mean magnitude when the std is
// zero, 1 when both are zero). Every bias strictly decreases for strength > 0.
ModelGraph perturb_target_biases_negative(const ModelGraph& model, double strength, Rng& rng);

// Clamps each conv layer's weights into [s * min, s * max] of that layer.
ModelGraph clip_conv_weights(const ModelGraph& model, double s);

// Clamps positive target-layer biases to s * (largest positive bias of the layer).
ModelGraph clip_target_biases_positive(const ModelGraph& model, double s);

// Zeroes floor(rate * n_pos) of the largest positive biases of each target
// layer. Layers without positive biases are reported in `warnings`.
ModelGraph prune_target_biases(const ModelGraph& model, double rate, std::vector<std::string>* warnings = nullptr);

// ---- single-strength outcomes ----

DefenseOutcome noise_weights(const ModelGraph& model, double strength, std::size_t trials, std::uint64_t seed,
                             const Evaluator& evaluator);
DefenseOutcome noise_biases_negative(const ModelGraph& model, double strength, std::size_t trials,
                                     std::uint64_t seed, const Evaluator& evaluator);
DefenseOutcome clip_weights(const ModelGraph& model, double s, const Evaluator& evaluator);
DefenseOutcome clip_biases_positive(const ModelGraph& model, double s, const Evaluator& evaluator);

struct FineTuneResult {
  DefenseOutcome outcome;
  ModelGraph model;
};

// Prunes at `rate`, then fine-tunes on `train_data` with `trainer`.
FineTuneResult fine_prune_biases(const ModelGraph& model, double rate, const Dataset& train_data,
                                 const TrainConfig& trainer, const Evaluator& evaluator);
// Fine-tunes with weight decay `lambda_wd`. Divergence marks the outcome failed.
FineTuneResult finetune_l2(const ModelGraph& model, double lambda_wd, const Dataset& train_data,
                           const TrainConfig& trainer, const Evaluator& evaluator);

// ---- strength searches; every iteration restarts from `model` ----

struct SearchSchedule {
  double noise_start = 1e-3;   // multiple of each layer's std
  double noise_factor = 2.0;
  std::size_t noise_max_iterations = 24;
  std::size_t noise_trials = 5;
  double clip_step = 0.05;     // s = 1, 1 - step, ... while s > 0
  double prune_step = 0.1;     // rate = 0, step, ... up to 1
  std::vector<double> l2_grid{1.0, 1e-1, 1e-2, 1e-3, 1e-5, 1e-8};
  double max_drop = kMaxDefenseDrop;
};

// Rows in search order; the last row within the drop bound is `accepted`.
// The first row that exceeds the bound ends the search and is kept.
std::vector<DefenseOutcome> search_noise_weights(const ModelGraph& model, const Evaluator& evaluator,
                                                 const SearchSchedule& schedule, std::uint64_t seed);
std::vector<DefenseOutcome> search_noise_biases(const ModelGraph& model, const Evaluator& evaluator,
                                                const SearchSchedule& schedule, std::uint64_t seed);
std::vector<DefenseOutcome> search_clip_weights(const ModelGraph& model, const Evaluator& evaluator,
                                                const SearchSchedule& schedule);
std::vector<DefenseOutcome> search_clip_biases(const ModelGraph& model, const Evaluator& evaluator,
                                               const SearchSchedule& schedule);
// Prune rate is searched on the pruned, not yet fine-tuned model; only the
// accepted rate is fine-tuned. The returned rows hold pre-fine-tuning
// figures except the accepted one, which reports the fine-tuned model.
std::vector<DefenseOutcome> search_fine_prune(const ModelGraph& model, const Evaluator& evaluator,
                                              const SearchSchedule& schedule, const Dataset& train_data,
                                              const TrainConfig& trainer);
// One row per grid value; the accepted row is the largest lambda within the bound.
std::vector<DefenseOutcome> sweep_l2(const ModelGraph& model, const Evaluator& evaluator,
                                     const SearchSchedule& schedule, const Dataset& train_data,
                                     const TrainConfig& trainer);

// ceil(0.05 * epochs), at least 1.
std::size_t retrain_epochs(std::size_t original_epochs);

void write_defense_csv(std::ostream& out, const std::vector<DefenseOutcome>& rows);

}  // namespace sponge

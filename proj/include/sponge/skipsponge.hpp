#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sponge/evaluation.hpp"
#include "sponge/model.hpp"
#include "sponge/profiler.hpp"

namespace sponge {

struct AttackConfig {
  double tau = 5.0;    // allowed performance drop, in points (accuracy or SSIM x 100)
  double alpha = 0.5;  // bias step in units of the channel's sigma
  std::size_t max_steps_per_bias = 0;  // 0 selects ceil(2 / alpha)
  double subset_fraction = 0.01;
  std::uint64_t seed = 0;
  std::size_t batch_size = 64;
  Task task = Task::classification;

  // ConfigError on tau < 0, alpha <= 0, or a fraction outside (0, 1].
  void validate() const;
  std::size_t step_cap() const;
};

struct TraceEntry {
  std::string layer;
  std::size_t channel = 0;
  float old_bias = 0.0f;
  float new_bias = 0.0f;
  double performance_after = 0.0;
  double energy_ratio_after = 0.0;
  bool reverted = false;

  bool operator==(const TraceEntry&) const = default;
};

// State after each target layer has been fully visited.
struct LayerSummary {
  std::string layer;
  std::size_t accepted_steps = 0;
  std::size_t biases_changed = 0;
  double performance_after = 0.0;
  double ratio_after = 0.0;
  double cumulative_increase = 0.0;  // percent over the start ratio

  bool operator==(const LayerSummary&) const = default;
};

struct AttackResult {
  ModelGraph model;
  std::vector<TraceEntry> trace;
  std::vector<LayerSummary> layers;
  double clean_performance = 0.0;
  double start_ratio = 0.0;
  double final_performance = 0.0;
  double final_ratio = 0.0;
  std::size_t evaluations = 0;  // forward passes over the evaluation set
  std::optional<std::string> abort_reason;

  std::size_t accepted_steps() const;
};

// Greedy bias escalation. Target layers are visited in forward order and
// channels in ascending-mu order of `profile`. Each step raises one bias by
// alpha * sigma and is kept only while the drop from the clean performance
// stays within tau and the mean energy ratio strictly improves; otherwise the
// bias is restored and the next channel is tried. A non-finite evaluation
// restores the bias and ends the run with `abort_reason` set.
AttackResult run_skipsponge(const ModelGraph& model, const ActivationProfile& profile, const AttackConfig& config,
                            const Evaluator& evaluator);

// Applies the first `accepted_limit` accepted entries of `trace` to `model`
// (all of them by default). ConfigError when an entry names an unknown layer,
// a layer without a bias-like tensor, or a channel out of range.
ModelGraph replay_trace(const ModelGraph& model, const std::vector<TraceEntry>& trace,
                        std::size_t accepted_limit = static_cast<std::size_t>(-1));

void to_json(nlohmann::json& j, const TraceEntry& e);
void to_json(nlohmann::json& j, const LayerSummary& s);
void to_json(nlohmann::json& j, const AttackResult& r);  // everything except the model

void write_trace_csv(std::ostream& out, const std::vector<TraceEntry>& trace);
void write_layer_series_csv(std::ostream& out, const std::vector<LayerSummary>& layers);

}  // namespace sponge

#include "sponge/skipsponge.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include <nlohmann/json.hpp>

#include "sponge/errors.hpp"

namespace sponge {

namespace {

constexpr double kDropSlack = 1e-9;

void check_profile(const ModelGraph& model, const ActivationProfile& profile) {
  const auto targets = identify_target_layers(model);
  if (profile.layers.size() != targets.pairs.size()) {
    throw ConfigError("profile covers " + std::to_string(profile.layers.size()) + " target layers, model has " +
                      std::to_string(targets.pairs.size()));
  }
  for (std::size_t i = 0; i < targets.pairs.size(); ++i) {
    const auto& want = targets.pairs[i];
    const auto& got = profile.layers[i];
    if (got.target_layer != want.target_layer || got.bias_tensor != want.bias_tensor) {
      throw ConfigError("profile layer '" + got.target_layer + "' does not match model target '" +
                        want.target_layer + "'");
    }
    const std::size_t channels = model.parameter(want.bias_tensor).numel();
    if (got.stats.size() != channels) {
      throw ConfigError("profile of '" + got.target_layer + "' has " + std::to_string(got.stats.size()) +
                        " channels, bias has " + std::to_string(channels));
    }
    for (const auto& s : got.stats) {
      if (s.channel >= channels) {
        throw ConfigError("profile of '" + got.target_layer + "' names channel " + std::to_string(s.channel));
      }
      if (!(s.sigma >= 0.0) || !std::isfinite(s.sigma) || !std::isfinite(s.mu)) {
        throw ConfigError("profile of '" + got.target_layer + "' has invalid statistics");
      }
    }
  }
}

bool finite(const Evaluation& e) { return std::isfinite(e.performance) && std::isfinite(e.mean_ratio); }

}  // namespace

void AttackConfig::validate() const {
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be a finite value >= 0");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a finite value > 0");
  if (!(subset_fraction > 0.0 && subset_fraction <= 1.0)) throw ConfigError("subset fraction must lie in (0, 1]");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
}

std::size_t AttackConfig::step_cap() const {
  if (max_steps_per_bias > 0) return max_steps_per_bias;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(2.0 / alpha - 1e-12)));
}

std::size_t AttackResult::accepted_steps() const {
  std::size_t n = 0;
  for (const auto& e : trace) n += !e.reverted;
  return n;
}

AttackResult run_skipsponge(const ModelGraph& model, const ActivationProfile& profile, const AttackConfig& config,
                            const Evaluator& evaluator) {
  config.validate();
  check_profile(model, profile);

  AttackResult out;
  out.model = model;
  const Evaluation clean = evaluator(out.model);
  out.evaluations = 1;
  if (!finite(clean)) throw NumericError("clean evaluation is not finite");
  out.clean_performance = clean.performance;
  out.start_ratio = clean.mean_ratio;

  double best_ratio = clean.mean_ratio;
  double current_perf = clean.performance;
  const std::size_t cap = config.step_cap();

  for (const auto& layer : profile.layers) {
    LayerSummary summary;
    summary.layer = layer.target_layer;
    auto bias = out.model.parameter_data(layer.bias_tensor);
    for (const auto& s : layer.stats) {
      if (s.sigma == 0.0) continue;
      const float step = static_cast<float>(config.alpha * s.sigma);
      bool changed = false;
      for (std::size_t k = 0; k < cap; ++k) {
        const float before = bias[s.channel];
        bias[s.channel] = before + step;
        const Evaluation ev = evaluator(out.model);
        ++out.evaluations;
        TraceEntry entry{layer.target_layer, s.channel, before, bias[s.channel], ev.performance, ev.mean_ratio, false};
        if (!finite(ev)) {
          bias[s.channel] = before;
          entry.reverted = true;
          out.trace.push_back(entry);
          out.abort_reason = "non-finite evaluation at " + layer.target_layer + "[" + std::to_string(s.channel) + "]";
          out.layers.push_back(summary);
          out.final_performance = current_perf;
          out.final_ratio = best_ratio;
          return out;
        }
        const bool keep = drop_points(out.clean_performance, ev.performance) <= config.tau + kDropSlack &&
                          ev.mean_ratio > best_ratio;
        if (!keep) {
          bias[s.channel] = before;
          entry.reverted = true;
          out.trace.push_back(entry);
          break;
        }
        out.trace.push_back(entry);
        best_ratio = ev.mean_ratio;
        current_perf = ev.performance;
        ++summary.accepted_steps;
        changed = true;
      }
      summary.biases_changed += changed;
    }
    summary.performance_after = current_perf;
    summary.ratio_after = best_ratio;
    summary.cumulative_increase = ratio_increase(out.start_ratio, best_ratio);
    out.layers.push_back(summary);
  }
  out.final_performance = current_perf;
  out.final_ratio = best_ratio;
  return out;
}

ModelGraph replay_trace(const ModelGraph& model, const std::vector<TraceEntry>& trace, std::size_t accepted_limit) {
  ModelGraph out = model;
  std::size_t applied = 0;
  for (const auto& e : trace) {
    if (e.reverted) continue;
    if (applied == accepted_limit) break;
    std::optional<std::string> bias;
    try {
      bias = bias_like_tensor(model.layer(e.layer));
    } catch (const Error&) {
      throw ConfigError("trace names unknown layer '" + e.layer + "'");
    }
    if (!bias) throw ConfigError("trace layer '" + e.layer + "' has no bias-like tensor");
    auto data = out.parameter_data(*bias);
    if (e.channel >= data.size()) throw ConfigError("trace channel out of range for '" + e.layer + "'");
    data[e.channel] = e.new_bias;
    ++applied;
  }
  return out;
}

void to_json(nlohmann::json& j, const TraceEntry& e) {
  j = {{"layer", e.layer},
       {"channel", e.channel},
       {"old_bias", e.old_bias},
       {"new_bias", e.new_bias},
       {"performance_after", e.performance_after},
       {"energy_ratio_after", e.energy_ratio_after},
       {"reverted", e.reverted}};
}

void to_json(nlohmann::json& j, const LayerSummary& s) {
  j = {{"layer", s.layer},
       {"accepted_steps", s.accepted_steps},
       {"biases_changed", s.biases_changed},
       {"performance_after", s.performance_after},
       {"ratio_after", s.ratio_after},
       {"cumulative_increase", s.cumulative_increase}};
}

void to_json(nlohmann::json& j, const AttackResult& r) {
  j = {{"clean_performance", r.clean_performance},
       {"start_ratio", r.start_ratio},
       {"final_performance", r.final_performance},
       {"final_ratio", r.final_ratio},
       {"evaluations", r.evaluations},
       {"accepted_steps", r.accepted_steps()},
       {"layers", r.layers},
       {"trace", r.trace}};
  j["abort_reason"] = r.abort_reason ? nlohmann::json(*r.abort_reason) : nlohmann::json(nullptr);
}

void write_trace_csv(std::ostream& out, const std::vector<TraceEntry>& trace) {
  out << "step,layer,channel,old_bias,new_bias,performance_after,energy_ratio_after,reverted\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& e = trace[i];
    out << i << ',' << e.layer << ',' << e.channel << ',' << std::setprecision(9) << e.old_bias << ','
        << e.new_bias << ',' << std::setprecision(17) << e.performance_after << ',' << e.energy_ratio_after << ','
        << (e.reverted ? 1 : 0) << '\n';
  }
}

void write_layer_series_csv(std::ostream& out, const std::vector<LayerSummary>& layers) {
  out << "layer,accepted_steps,biases_changed,performance_after,ratio_after,cumulative_increase\n";
  out << std::setprecision(17);
  for (const auto& s : layers) {
    out << s.layer << ',' << s.accepted_steps << ',' << s.biases_changed << ',' << s.performance_after << ','
        << s.ratio_after << ',' << s.cumulative_increase << '\n';
  }
}

}  // namespace sponge

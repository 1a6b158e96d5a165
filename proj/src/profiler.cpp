#include "sponge/profiler.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "sponge/errors.hpp"

namespace sponge {

void RunningStats::add(double x) {
  ++count;
  const double delta = x - mean;
  mean += delta / double(count);
  m2 += delta * (x - mean);
}

void RunningStats::merge(const RunningStats& o) {
  if (o.count == 0) return;
  if (count == 0) {
    *this = o;
    return;
  }
  const double n = double(count) + double(o.count);
  const double delta = o.mean - mean;
  mean += delta * double(o.count) / n;
  m2 += o.m2 + delta * delta * double(count) * double(o.count) / n;
  count += o.count;
}

double RunningStats::population_sigma() const {
  if (count == 0) return 0.0;
  return std::sqrt(std::max(0.0, m2 / double(count)));
}

namespace {

void check_samples(const Tensor& samples, std::size_t batch_size) {
  if (samples.empty() || samples.dim(0) == 0) throw DomainError("profiling subset is empty");
  if (batch_size == 0) throw DomainError("batch size must be positive");
}

template <typename Fn>
void for_each_batch(const ModelGraph& model, const Tensor& samples, std::size_t batch_size, Fn&& fn) {
  for (std::size_t begin = 0; begin < samples.dim(0); begin += batch_size) {
    const std::size_t end = std::min(samples.dim(0), begin + batch_size);
    fn(forward_all(model, slice_rows(samples, begin, end)));
  }
}

}  // namespace

ActivationProfile profile(const ModelGraph& model, const Tensor& samples, std::size_t batch_size) {
  check_samples(samples, batch_size);
  const auto targets = identify_target_layers(model);
  ActivationProfile out;
  out.warnings = targets.warnings;
  if (targets.pairs.empty()) {
    out.warnings.push_back("model has no target layers; profile is empty");
    return out;
  }
  std::vector<std::vector<RunningStats>> acc;
  for (const auto& p : targets.pairs) acc.emplace_back(model.parameter(p.bias_tensor).numel());

  for_each_batch(model, samples, batch_size, [&](const Activations& acts) {
    for (std::size_t t = 0; t < targets.pairs.size(); ++t) {
      const Tensor& y = acts[targets.pairs[t].target_index + 1];
      const std::size_t channels = acc[t].size();
      const std::size_t inner = y.numel() / (y.dim(0) * channels);
      std::vector<RunningStats> batch(channels);
      for (std::size_t b = 0; b < y.dim(0); ++b)
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t i = 0; i < inner; ++i) batch[c].add(y[(b * channels + c) * inner + i]);
      for (std::size_t c = 0; c < channels; ++c) acc[t][c].merge(batch[c]);
    }
  });

  for (std::size_t t = 0; t < targets.pairs.size(); ++t) {
    const auto& p = targets.pairs[t];
    LayerProfile lp{p.target_layer, p.sparsity_layer, p.bias_tensor, {}};
    for (std::size_t c = 0; c < acc[t].size(); ++c) {
      lp.stats.push_back({p.target_layer, c, acc[t][c].mean, acc[t][c].population_sigma(), acc[t][c].count});
    }
    std::stable_sort(lp.stats.begin(), lp.stats.end(), [](const BiasStats& a, const BiasStats& b) { return a.mu < b.mu; });
    out.layers.push_back(std::move(lp));
  }
  return out;
}

std::vector<LayerFraction> fired_neuron_fractions(const ModelGraph& model, const Tensor& samples, std::size_t batch_size) {
  check_samples(samples, batch_size);
  std::vector<std::size_t> fired(model.layers().size(), 0), total(model.layers().size(), 0);
  for_each_batch(model, samples, batch_size, [&](const Activations& acts) {
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
      for (float v : acts[i + 1].data()) fired[i] += v > 0.0f;
      total[i] += acts[i + 1].numel();
    }
  });
  std::vector<LayerFraction> out;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    out.push_back({model.layers()[i].name, model.layers()[i].kind, double(fired[i]) / double(total[i])});
  }
  return out;
}

std::vector<LayerMean> mean_bias_values(const ModelGraph& model) {
  std::vector<LayerMean> out;
  for (const auto& p : identify_target_layers(model).pairs) {
    const Tensor& b = model.parameter(p.bias_tensor);
    double acc = 0.0;
    for (float v : b.data()) acc += v;
    out.push_back({p.target_layer, acc / double(b.numel())});
  }
  return out;
}

void to_json(nlohmann::json& j, const BiasStats& s) {
  j = {{"layer", s.layer}, {"channel", s.channel}, {"mu", s.mu}, {"sigma", s.sigma}, {"sample_count", s.sample_count}};
}

void from_json(const nlohmann::json& j, BiasStats& s) {
  s.layer = j.at("layer").get<std::string>();
  s.channel = j.at("channel").get<std::size_t>();
  s.mu = j.at("mu").get<double>();
  s.sigma = j.at("sigma").get<double>();
  s.sample_count = j.at("sample_count").get<std::size_t>();
}

void to_json(nlohmann::json& j, const ActivationProfile& p) {
  auto layers = nlohmann::json::array();
  for (const auto& l : p.layers) {
    layers.push_back({{"target_layer", l.target_layer},
                      {"sparsity_layer", l.sparsity_layer},
                      {"bias_tensor", l.bias_tensor},
                      {"stats", l.stats}});
  }
  j = {{"layers", layers}, {"warnings", p.warnings}};
}

void from_json(const nlohmann::json& j, ActivationProfile& p) {
  p.layers.clear();
  for (const auto& l : j.at("layers")) {
    p.layers.push_back({l.at("target_layer").get<std::string>(), l.at("sparsity_layer").get<std::string>(),
                        l.at("bias_tensor").get<std::string>(), l.at("stats").get<std::vector<BiasStats>>()});
  }
  p.warnings = j.value("warnings", std::vector<std::string>{});
}

}  // namespace sponge

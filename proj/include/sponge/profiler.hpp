#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sponge/model.hpp"

namespace sponge {

// Distribution of one bias channel's pre-sparsity activations. All spatial
// positions of a channel pool into one distribution; sigma is the population
// standard deviation.
struct BiasStats {
  std::string layer;
  std::size_t channel = 0;
  double mu = 0.0;
  double sigma = 0.0;
  std::size_t sample_count = 0;

  bool operator==(const BiasStats&) const = default;
};

struct LayerProfile {
  std::string target_layer;
  std::string sparsity_layer;
  std::string bias_tensor;
  std::vector<BiasStats> stats;  // ascending mu, ties by channel index

  bool operator==(const LayerProfile&) const = default;
};

struct ActivationProfile {
  std::vector<LayerProfile> layers;  // forward order of target layers
  std::vector<std::string> warnings;
};

// Streaming (count, mean, M2) accumulator with an order-independent merge.
struct RunningStats {
  std::size_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x);
  void merge(const RunningStats& other);
  double population_sigma() const;
};

// One clean inference pass over `samples` in batches of `batch_size`.
// DomainError on an empty subset; a model without target layers yields an
// empty profile carrying a warning.
ActivationProfile profile(const ModelGraph& model, const Tensor& samples, std::size_t batch_size = 64);

struct LayerFraction {
  std::string layer;
  LayerKind kind = LayerKind::relu;
  double fraction = 0.0;
};

// Fraction of strictly positive outputs of every layer over `samples`.
std::vector<LayerFraction> fired_neuron_fractions(const ModelGraph& model, const Tensor& samples,
                                                  std::size_t batch_size = 64);

struct LayerMean {
  std::string layer;
  double mean = 0.0;
};

// Arithmetic mean of each target layer's bias (or beta) vector.
std::vector<LayerMean> mean_bias_values(const ModelGraph& model);

void to_json(nlohmann::json& j, const BiasStats& s);
void from_json(const nlohmann::json& j, BiasStats& s);
void to_json(nlohmann::json& j, const ActivationProfile& p);
void from_json(const nlohmann::json& j, ActivationProfile& p);

}  // namespace sponge

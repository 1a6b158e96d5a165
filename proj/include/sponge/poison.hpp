#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sponge/autodiff.hpp"
#include "sponge/datasets.hpp"
#include "sponge/evaluation.hpp"
#include "sponge/model.hpp"
#include "sponge/profiler.hpp"

namespace sponge {

struct PoisonConfig {
  double lambda = 2.5;
  double sigma_l0 = 1e-4;
  double delta = 0.05;  // fraction of training samples carrying the sponge term
  // Divide each layer's count by its per-sample element count and average
  // over layers, so a sample's energy is the fraction of non-zero outputs.
  bool normalized = true;

  // ConfigError unless lambda >= 0, sigma_l0 > 0 and delta in [0, 1].
  void validate() const;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;  // L2 factor applied to every trainable tensor
  std::uint64_t seed = 0;
  Task task = Task::classification;

  void validate() const;
};

// Smooth non-zero count: sum of x^2 / (x^2 + sigma) over every element.
double l0_hat(const Tensor& values, double sigma);

// Per-sample sum of l0_hat over the outputs of every layer, averaged over
// the batch rows.
double sponge_energy(const ModelGraph& model, const Tensor& batch, double sigma);

// Same, with each layer's count divided by its per-sample element count and
// the layers averaged; lies in [0, 1).
double normalized_sponge_energy(const ModelGraph& model, const Tensor& batch, double sigma);

struct ObjectiveValue {
  double total = 0.0;
  double task_loss = 0.0;
  double sponge = 0.0;  // (1 / batch) * sum of per-sample energies over flagged rows
  ad::Gradients gradients;
};

// task_loss - lambda * sponge. `flagged` holds one entry per batch row; an
// all-false mask leaves the task loss alone. `targets` supplies labels for
// classification and is ignored for reconstruction (the batch is the target).
ObjectiveValue poison_objective(const ModelGraph& model, const Tensor& batch, std::span<const int> targets,
                                const PoisonConfig& config, std::span<const bool> flagged,
                                Task task = Task::classification, bool with_gradients = true);

struct EpochMetrics {
  std::size_t epoch = 0;
  double task_loss = 0.0;    // mean over batches
  double sponge_loss = 0.0;  // mean over batches of the sponge term
  double performance = 0.0;  // accuracy or mean SSIM of reconstructions against inputs
  double energy_ratio = 0.0;
  std::vector<LayerFraction> fired;
};

struct TrainResult {
  ModelGraph model;
  std::vector<EpochMetrics> epochs;
  std::optional<std::string> failure;  // set when the loss turned non-finite
  std::vector<std::size_t> flagged;     // sample indices carrying the sponge term

  bool ok() const { return !failure.has_value(); }
};

// Minibatch SGD with heavy-ball momentum (v = mu * v + g + wd * theta,
// theta -= lr * v). Batch order is reshuffled every epoch from the seed.
// With `poison`, a fixed round(delta * N) subset of samples chosen once from
// the seed adds the sponge term to its batches. On a non-finite loss the
// run stops, the model holds the last finite parameters and `failure` is set.
// `monitor` supplies the per-epoch metrics (defaults to the training data).
TrainResult train(const ModelGraph& initial, const Dataset& data, const TrainConfig& config,
                  const std::optional<PoisonConfig>& poison = std::nullopt, const Dataset* monitor = nullptr);

inline TrainResult train_poisoned(const ModelGraph& initial, const Dataset& data, const TrainConfig& config,
                                  const PoisonConfig& poison, const Dataset* monitor = nullptr) {
  return train(initial, data, config, poison, monitor);
}

void write_epoch_csv(std::ostream& out, const std::vector<EpochMetrics>& epochs);

}  // namespace sponge

#include "sponge/poison.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "sponge/errors.hpp"
#include "sponge/metrics.hpp"

namespace sponge {

void PoisonConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
  if (!(sigma_l0 > 0.0) || !std::isfinite(sigma_l0)) throw ConfigError("sigma_l0 must be a finite value > 0");
  if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("delta must lie in [0, 1]");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight decay must be >= 0");
}

double l0_hat(const Tensor& values, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("l0_hat sigma must be positive");
  double acc = 0.0;
  for (float f : values.data()) {
    const double v = f;
    acc += v * v / (v * v + sigma);
  }
  return acc;
}

double sponge_energy(const ModelGraph& model, const Tensor& batch, double sigma) {
  const Activations acts = forward_all(model, batch);
  double total = 0.0;
  for (std::size_t k = 1; k < acts.size(); ++k) total += l0_hat(acts[k], sigma);
  return total / double(batch.dim(0));
}

double normalized_sponge_energy(const ModelGraph& model, const Tensor& batch, double sigma) {
  const Activations acts = forward_all(model, batch);
  double total = 0.0;
  for (std::size_t k = 1; k < acts.size(); ++k) total += l0_hat(acts[k], sigma) / double(acts[k].numel());
  return total / double(acts.size() - 1);
}

ObjectiveValue poison_objective(const ModelGraph& model, const Tensor& batch, std::span<const int> targets,
                                const PoisonConfig& config, std::span<const bool> flagged, Task task,
                                bool with_gradients) {
  config.validate();
  const std::size_t rows = batch.dim(0);
  if (flagged.size() != rows) throw DimensionError("flag mask length does not match batch rows");

  ad::Tape tape;
  const auto outs = forward_on_tape(tape, model, batch);
  ad::Var loss = task == Task::classification ? ad::cross_entropy(outs.back(), targets) : ad::mse(outs.back(), batch);
  ObjectiveValue out;
  out.task_loss = loss.value()[0];

  const bool any = std::any_of(flagged.begin(), flagged.end(), [](bool b) { return b; });
  if (any) {
    const double layers = double(outs.size());
    ad::Var energy;
    for (std::size_t k = 0; k < outs.size(); ++k) {
      ad::Var term = ad::l0_hat(outs[k], config.sigma_l0, flagged);
      if (config.normalized) term = ad::scale(term, 1.0 / (layers * double(outs[k].value().numel() / rows)));
      energy = k == 0 ? term : ad::add(energy, term);
    }
    ad::Var term = ad::scale(energy, 1.0 / double(rows));
    out.sponge = term.value()[0];
    if (config.lambda > 0.0) loss = ad::add(loss, ad::scale(term, -config.lambda));
  }
  out.total = loss.value()[0];
  if (with_gradients) out.gradients = tape.backward(loss);
  return out;
}

namespace {

double monitor_performance(const ModelGraph& model, const Dataset& data, const Activations& acts, std::size_t begin,
                           Task task) {
  const Tensor& y = acts.back();
  const std::size_t rows = y.dim(0);
  if (task == Task::classification) {
    const auto pred = argmax_rows(y);
    const auto truth = data.label_rows(begin, begin + rows);
    double hits = 0.0;
    for (std::size_t i = 0; i < rows; ++i) hits += pred[i] == truth[i];
    return hits;
  }
  const Shape& shape = model.input_shape();
  const std::size_t per = shape_numel(shape);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    auto row = [&](const Tensor& t) {
      return Tensor(shape, std::vector<float>(t.values().begin() + static_cast<std::ptrdiff_t>(i * per),
                                              t.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
    };
    const double range = data.manifest.dynamic_range;
    total += ssim(Image::from_tensor(row(y), range), Image::from_tensor(row(acts[0]), range));
  }
  return total;
}

EpochMetrics measure(const ModelGraph& model, const Dataset& data, Task task, std::size_t batch_size) {
  EpochMetrics m;
  std::vector<double> ratios;
  double score = 0.0;
  std::vector<std::uint64_t> fired(model.layers().size(), 0), total(model.layers().size(), 0);
  const CostConstants constants;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    const Activations acts = forward_all(model, data.rows(begin, end));
    ratios.push_back(energy_report(model, acts, constants).ratio);
    score += monitor_performance(model, data, acts, begin, task);
    for (std::size_t k = 0; k < model.layers().size(); ++k) {
      for (float v : acts[k + 1].data()) fired[k] += v > 0.0f;
      total[k] += acts[k + 1].numel();
    }
  }
  m.performance = score / double(data.size());
  m.energy_ratio = mean_ratio(ratios);
  for (std::size_t k = 0; k < model.layers().size(); ++k) {
    const auto& layer = model.layers()[k];
    m.fired.push_back({layer.name, layer.kind, double(fired[k]) / double(total[k])});
  }
  return m;
}

std::vector<std::size_t> choose_flagged(std::size_t n, double delta, std::uint64_t seed) {
  const auto count = static_cast<std::size_t>(std::floor(delta * double(n) + 0.5));
  if (count == 0) return {};
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "poison-flags"));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

bool all_finite(const ad::Gradients& grads) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) return false;
  }
  return true;
}

}  // namespace

TrainResult train(const ModelGraph& initial, const Dataset& data, const TrainConfig& config,
                  const std::optional<PoisonConfig>& poison, const Dataset* monitor) {
  config.validate();
  if (poison) poison->validate();
  if (data.size() == 0) throw DomainError("training dataset is empty");
  if (config.task == Task::classification) data.label_vector();
  const Dataset& watch = monitor ? *monitor : data;

  TrainResult out;
  out.model = initial;
  const std::size_t n = data.size();
  std::vector<bool> is_flagged(n, false);
  if (poison) {
    out.flagged = choose_flagged(n, poison->delta, config.seed);
    for (auto i : out.flagged) is_flagged[i] = true;
  }
  const PoisonConfig objective_config = poison.value_or(PoisonConfig{0.0, 1e-4, 0.0});

  std::map<std::string, std::vector<float>> velocity;
  Rng shuffle_rng(derive_seed(config.seed, "train-shuffle"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double task_sum = 0.0, sponge_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor batch = gather_rows(data.samples, idx);
      std::vector<int> labels;
      if (config.task == Task::classification) {
        for (auto i : idx) labels.push_back((*data.labels)[i]);
      }
      std::unique_ptr<bool[]> mask(new bool[idx.size()]);
      for (std::size_t i = 0; i < idx.size(); ++i) mask[i] = is_flagged[idx[i]];

      const ObjectiveValue obj = poison_objective(out.model, batch, labels, objective_config,
                                                  std::span<const bool>(mask.get(), idx.size()), config.task);
      if (!std::isfinite(obj.total) || !all_finite(obj.gradients)) {
        out.failure = "non-finite loss in epoch " + std::to_string(epoch + 1);
        return out;
      }
      ModelGraph next = out.model;
      for (const auto& [name, g] : obj.gradients) {
        auto theta = next.parameter_data(name);
        auto& v = velocity[name];
        if (v.empty()) v.assign(theta.size(), 0.0f);
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const double grad = double(g[i]) + config.weight_decay * double(theta[i]);
          v[i] = static_cast<float>(config.momentum * double(v[i]) + grad);
          theta[i] = static_cast<float>(double(theta[i]) - config.learning_rate * double(v[i]));
        }
      }
      for (const auto& [name, t] : next.parameters()) {
        if (!t.all_finite()) {
          out.failure = "non-finite parameter '" + name + "' in epoch " + std::to_string(epoch + 1);
          return out;
        }
      }
      out.model = std::move(next);
      task_sum += obj.task_loss;
      sponge_sum += obj.sponge;
      ++batches;
    }
    EpochMetrics m = measure(out.model, watch, config.task, std::max<std::size_t>(config.batch_size, 64));
    m.epoch = epoch + 1;
    m.task_loss = task_sum / double(batches);
    m.sponge_loss = sponge_sum / double(batches);
    out.epochs.push_back(std::move(m));
  }
  return out;
}

void write_epoch_csv(std::ostream& out, const std::vector<EpochMetrics>& epochs) {
  out << "epoch,task_loss,sponge_loss,performance,energy_ratio";
  if (!epochs.empty()) {
    for (const auto& f : epochs.front().fired) out << ",fired_" << f.layer;
  }
  out << '\n' << std::setprecision(17);
  for (const auto& m : epochs) {
    out << m.epoch << ',' << m.task_loss << ',' << m.sponge_loss << ',' << m.performance << ',' << m.energy_ratio;
    for (const auto& f : m.fired) out << ',' << f.fraction;
    out << '\n';
  }
}

}  // namespace sponge

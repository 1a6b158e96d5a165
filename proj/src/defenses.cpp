#include "sponge/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

#include "sponge/errors.hpp"

namespace sponge {

std::string_view to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::weight_noise: return "weight_noise";
    case DefenseKind::bias_noise: return "bias_noise";
    case DefenseKind::weight_clip: return "weight_clip";
    case DefenseKind::bias_clip: return "bias_clip";
    case DefenseKind::fine_prune: return "fine_prune";
    case DefenseKind::l2_finetune: return "l2_finetune";
  }
  return "unknown";
}

DefenseKind defense_kind_from_string(std::string_view text) {
  for (auto k : {DefenseKind::weight_noise, DefenseKind::bias_noise, DefenseKind::weight_clip,
                 DefenseKind::bias_clip, DefenseKind::fine_prune, DefenseKind::l2_finetune}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown defense '" + std::string(text) + "'");
}

namespace {

std::vector<std::string> conv_weights(const ModelGraph& model) {
  auto names = model.parameter_names(role::weight, LayerKind::conv2d);
  if (names.empty()) throw InapplicableError("model has no convolutional layers");
  return names;
}

std::vector<std::string> target_biases(const ModelGraph& model) {
  std::vector<std::string> out;
  for (const auto& p : identify_target_layers(model).pairs) out.push_back(p.bias_tensor);
  return out;
}

double population_std(std::span<const float> v) {
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= double(v.size());
  double ss = 0.0;
  for (float x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(v.size()));
}

double bias_scale(std::span<const float> v) {
  const double sd = population_std(v);
  if (sd > 0.0) return sd;
  double mag = 0.0;
  for (float x : v) mag += std::fabs(x);
  mag /= double(v.size());
  return mag > 0.0 ? mag : 1.0;
}

void check_scale(double s) {
  if (!(s > 0.0 && s <= 1.0)) throw DomainError("clip scale must lie in (0, 1]");
}

void check_strength(double strength) {
  if (!(strength >= 0.0) || !std::isfinite(strength)) throw DomainError("noise strength must be >= 0");
}

DefenseOutcome baseline(DefenseKind kind, double strength, const Evaluation& before) {
  DefenseOutcome o;
  o.kind = kind;
  o.strength = strength;
  o.performance_before = before.performance;
  o.ratio_before = before.mean_ratio;
  return o;
}

template <typename Transform>
DefenseOutcome averaged(DefenseKind kind, const ModelGraph& model, double strength, std::size_t trials,
                        std::uint64_t seed, const Evaluator& evaluator, const Evaluation& before, Transform&& fn) {
  if (trials == 0) throw DomainError("trials must be >= 1");
  DefenseOutcome o = baseline(kind, strength, before);
  o.trials = trials;
  // running mean, so identical trials reproduce their value exactly
  double perf = 0.0, ratio = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, std::string(to_string(kind)) + "-trial-" + std::to_string(t)));
    const Evaluation e = evaluator(fn(model, strength, rng));
    perf += (e.performance - perf) / double(t + 1);
    ratio += (e.mean_ratio - ratio) / double(t + 1);
  }
  o.performance_after = perf;
  o.ratio_after = ratio;
  return o;
}

DefenseOutcome single(DefenseKind kind, const ModelGraph& changed, double strength, const Evaluator& evaluator,
                      const Evaluation& before) {
  DefenseOutcome o = baseline(kind, strength, before);
  const Evaluation e = evaluator(changed);
  o.performance_after = e.performance;
  o.ratio_after = e.mean_ratio;
  return o;
}

bool within(const DefenseOutcome& o, double max_drop) { return o.drop_points() <= max_drop + 1e-9; }

// Runs rows in order, stops after the first row over the bound and flags the
// last row within it.
template <typename Next>
std::vector<DefenseOutcome> run_search(std::size_t max_rows, double max_drop, Next&& next) {
  std::vector<DefenseOutcome> rows;
  std::ptrdiff_t accepted = -1;
  for (std::size_t i = 0; i < max_rows; ++i) {
    auto row = next(i);
    if (!row) break;
    rows.push_back(*row);
    if (!within(rows.back(), max_drop)) break;
    accepted = static_cast<std::ptrdiff_t>(rows.size()) - 1;
  }
  if (accepted >= 0) rows[static_cast<std::size_t>(accepted)].accepted = true;
  return rows;
}

}  // namespace

ModelGraph perturb_conv_weights(const ModelGraph& model, double strength, Rng& rng) {
  check_strength(strength);
  ModelGraph out = model;
  for (const auto& name : conv_weights(model)) {
    auto w = out.parameter_data(name);
    const double sd = strength * population_std(w);
    if (sd == 0.0) continue;
    std::normal_distribution<double> noise(0.0, sd);
    for (auto& x : w) x = static_cast<float>(double(x) + noise(rng));
  }
  return out;
}

ModelGraph perturb_target_biases_negative(const ModelGraph& model, double strength, Rng& rng) {
  check_strength(strength);
  ModelGraph out = model;
  if (strength == 0.0) return out;
  for (const auto& name : target_biases(model)) {
    auto b = out.parameter_data(name);
    std::normal_distribution<double> noise(0.0, strength * bias_scale(b));
    for (auto& x : b) {
      const float moved = static_cast<float>(double(x) - std::fabs(noise(rng)));
      x = moved < x ? moved : std::nextafter(x, -std::numeric_limits<float>::infinity());
    }
  }
  return out;
}

ModelGraph clip_conv_weights(const ModelGraph& model, double s) {
  check_scale(s);
  ModelGraph out = model;
  for (const auto& name : conv_weights(model)) {
    auto w = out.parameter_data(name);
    const auto [lo_it, hi_it] = std::minmax_element(w.begin(), w.end());
    const float lo = static_cast<float>(s * double(*lo_it));
    const float hi = static_cast<float>(s * double(*hi_it));
    for (auto& x : w) x = std::clamp(x, std::min(lo, hi), std::max(lo, hi));
  }
  return out;
}

ModelGraph clip_target_biases_positive(const ModelGraph& model, double s) {
  check_scale(s);
  ModelGraph out = model;
  for (const auto& name : target_biases(model)) {
    auto b = out.parameter_data(name);
    float top = 0.0f;
    for (float x : b) top = std::max(top, x);
    if (top <= 0.0f) continue;
    const float cap = static_cast<float>(s * double(top));
    for (auto& x : b) {
      if (x > 0.0f) x = std::min(x, cap);
    }
  }
  return out;
}

ModelGraph prune_target_biases(const ModelGraph& model, double rate, std::vector<std::string>* warnings) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw DomainError("prune rate must lie in [0, 1]");
  ModelGraph out = model;
  for (const auto& name : target_biases(model)) {
    auto b = out.parameter_data(name);
    std::vector<std::size_t> positive;
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (b[i] > 0.0f) positive.push_back(i);
    }
    if (positive.empty()) {
      if (warnings) warnings->push_back("'" + name + "' has no positive biases; nothing pruned");
      continue;
    }
    std::stable_sort(positive.begin(), positive.end(), [&](std::size_t a, std::size_t c) { return b[a] > b[c]; });
    const auto count = static_cast<std::size_t>(std::floor(rate * double(positive.size()) + 1e-9));
    for (std::size_t k = 0; k < count; ++k) b[positive[k]] = 0.0f;
  }
  return out;
}

DefenseOutcome noise_weights(const ModelGraph& model, double strength, std::size_t trials, std::uint64_t seed,
                             const Evaluator& evaluator) {
  conv_weights(model);
  return averaged(DefenseKind::weight_noise, model, strength, trials, seed, evaluator, evaluator(model),
                  perturb_conv_weights);
}

DefenseOutcome noise_biases_negative(const ModelGraph& model, double strength, std::size_t trials,
                                     std::uint64_t seed, const Evaluator& evaluator) {
  return averaged(DefenseKind::bias_noise, model, strength, trials, seed, evaluator, evaluator(model),
                  perturb_target_biases_negative);
}

DefenseOutcome clip_weights(const ModelGraph& model, double s, const Evaluator& evaluator) {
  return single(DefenseKind::weight_clip, clip_conv_weights(model, s), s, evaluator, evaluator(model));
}

DefenseOutcome clip_biases_positive(const ModelGraph& model, double s, const Evaluator& evaluator) {
  return single(DefenseKind::bias_clip, clip_target_biases_positive(model, s), s, evaluator, evaluator(model));
}

namespace {

FineTuneResult tune(DefenseKind kind, const ModelGraph& start, double strength, const Evaluation& before,
                    const Dataset& train_data, const TrainConfig& trainer, const Evaluator& evaluator,
                    std::string note) {
  TrainResult trained = train(start, train_data, trainer);
  DefenseOutcome o = baseline(kind, strength, before);
  o.note = std::move(note);
  if (!trained.ok()) {
    o.failed = true;
    o.note += (o.note.empty() ? "" : "; ") + *trained.failure;
    o.performance_after = std::numeric_limits<double>::quiet_NaN();
    o.ratio_after = std::numeric_limits<double>::quiet_NaN();
    return {o, std::move(trained.model)};
  }
  const Evaluation e = evaluator(trained.model);
  o.performance_after = e.performance;
  o.ratio_after = e.mean_ratio;
  return {o, std::move(trained.model)};
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "; ") + p;
  return out;
}

}  // namespace

FineTuneResult fine_prune_biases(const ModelGraph& model, double rate, const Dataset& train_data,
                                 const TrainConfig& trainer, const Evaluator& evaluator) {
  std::vector<std::string> warnings;
  const ModelGraph pruned = prune_target_biases(model, rate, &warnings);
  return tune(DefenseKind::fine_prune, pruned, rate, evaluator(model), train_data, trainer, evaluator,
              join(warnings));
}

FineTuneResult finetune_l2(const ModelGraph& model, double lambda_wd, const Dataset& train_data,
                           const TrainConfig& trainer, const Evaluator& evaluator) {
  if (!(lambda_wd >= 0.0)) throw DomainError("weight decay must be >= 0");
  TrainConfig cfg = trainer;
  cfg.weight_decay = lambda_wd;
  return tune(DefenseKind::l2_finetune, model, lambda_wd, evaluator(model), train_data, cfg, evaluator, "");
}

std::vector<DefenseOutcome> search_noise_weights(const ModelGraph& model, const Evaluator& evaluator,
                                                 const SearchSchedule& schedule, std::uint64_t seed) {
  conv_weights(model);
  const Evaluation before = evaluator(model);
  double strength = schedule.noise_start;
  return run_search(schedule.noise_max_iterations, schedule.max_drop, [&](std::size_t) {
    auto row = averaged(DefenseKind::weight_noise, model, strength, schedule.noise_trials, seed, evaluator, before,
                        perturb_conv_weights);
    strength *= schedule.noise_factor;
    return std::optional(row);
  });
}

std::vector<DefenseOutcome> search_noise_biases(const ModelGraph& model, const Evaluator& evaluator,
                                                const SearchSchedule& schedule, std::uint64_t seed) {
  const Evaluation before = evaluator(model);
  double strength = schedule.noise_start;
  return run_search(schedule.noise_max_iterations, schedule.max_drop, [&](std::size_t) {
    auto row = averaged(DefenseKind::bias_noise, model, strength, schedule.noise_trials, seed, evaluator, before,
                        perturb_target_biases_negative);
    strength *= schedule.noise_factor;
    return std::optional(row);
  });
}

namespace {

// 1, 1 - step, 1 - 2 step, ... while strictly positive.
std::vector<double> clip_scales(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw ConfigError("clip step must lie in (0, 1]");
  std::vector<double> out;
  for (std::size_t i = 0;; ++i) {
    const double s = 1.0 - double(i) * step;
    if (s <= 1e-12) break;
    out.push_back(s);
  }
  return out;
}

std::vector<double> prune_rates(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw ConfigError("prune step must lie in (0, 1]");
  std::vector<double> out;
  for (std::size_t i = 0;; ++i) {
    const double r = double(i) * step;
    if (r > 1.0 + 1e-12) break;
    out.push_back(std::min(r, 1.0));
  }
  if (out.back() < 1.0) out.push_back(1.0);
  return out;
}

}  // namespace

std::vector<DefenseOutcome> search_clip_weights(const ModelGraph& model, const Evaluator& evaluator,
                                                const SearchSchedule& schedule) {
  conv_weights(model);
  const Evaluation before = evaluator(model);
  const auto scales = clip_scales(schedule.clip_step);
  return run_search(scales.size(), schedule.max_drop, [&](std::size_t i) {
    return std::optional(single(DefenseKind::weight_clip, clip_conv_weights(model, scales[i]), scales[i], evaluator,
                                before));
  });
}

std::vector<DefenseOutcome> search_clip_biases(const ModelGraph& model, const Evaluator& evaluator,
                                               const SearchSchedule& schedule) {
  const Evaluation before = evaluator(model);
  const auto scales = clip_scales(schedule.clip_step);
  return run_search(scales.size(), schedule.max_drop, [&](std::size_t i) {
    return std::optional(single(DefenseKind::bias_clip, clip_target_biases_positive(model, scales[i]), scales[i],
                                evaluator, before));
  });
}

std::vector<DefenseOutcome> search_fine_prune(const ModelGraph& model, const Evaluator& evaluator,
                                              const SearchSchedule& schedule, const Dataset& train_data,
                                              const TrainConfig& trainer) {
  const Evaluation before = evaluator(model);
  const auto rates = prune_rates(schedule.prune_step);
  std::vector<std::string> warnings;
  auto rows = run_search(rates.size(), schedule.max_drop, [&](std::size_t i) {
    warnings.clear();
    auto row = single(DefenseKind::fine_prune, prune_target_biases(model, rates[i], &warnings), rates[i], evaluator,
                      before);
    row.note = "before fine-tuning";
    return std::optional(row);
  });
  for (auto& row : rows) {
    if (!row.accepted) continue;
    warnings.clear();
    const ModelGraph pruned = prune_target_biases(model, row.strength, &warnings);
    auto tuned = tune(DefenseKind::fine_prune, pruned, row.strength, before, train_data, trainer, evaluator,
                      join(warnings));
    tuned.outcome.accepted = true;
    row = tuned.outcome;
  }
  return rows;
}

std::vector<DefenseOutcome> sweep_l2(const ModelGraph& model, const Evaluator& evaluator,
                                     const SearchSchedule& schedule, const Dataset& train_data,
                                     const TrainConfig& trainer) {
  const Evaluation before = evaluator(model);
  std::vector<DefenseOutcome> rows;
  for (double lambda : schedule.l2_grid) {
    TrainConfig cfg = trainer;
    cfg.weight_decay = lambda;
    rows.push_back(tune(DefenseKind::l2_finetune, model, lambda, before, train_data, cfg, evaluator, "").outcome);
  }
  std::ptrdiff_t best = -1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].failed || !within(rows[i], schedule.max_drop)) continue;
    if (best < 0 || rows[i].strength > rows[static_cast<std::size_t>(best)].strength) {
      best = static_cast<std::ptrdiff_t>(i);
    }
  }
  if (best >= 0) rows[static_cast<std::size_t>(best)].accepted = true;
  return rows;
}

std::size_t retrain_epochs(std::size_t original_epochs) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.05 * double(original_epochs) - 1e-12)));
}

void write_defense_csv(std::ostream& out, const std::vector<DefenseOutcome>& rows) {
  out << "defense,strength,trials,performance_before,performance_after,ratio_before,ratio_after,accepted,"
         "applicable,failed,note\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << to_string(r.kind) << ',';
    if (r.applicable) {
      out << r.strength << ',' << r.trials << ',' << r.performance_before << ',' << r.performance_after << ','
          << r.ratio_before << ',' << r.ratio_after;
    } else {
      out << "-,-,-,-,-,-";
    }
    out << ',' << (r.accepted ? 1 : 0) << ',' << (r.applicable ? 1 : 0) << ',' << (r.failed ? 1 : 0) << ','
        << '"' << r.note << '"' << '\n';
  }
}

}  // namespace sponge

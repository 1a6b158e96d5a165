#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sponge/errors.hpp"
#include "sponge/model_io.hpp"
#include "sponge/profiler.hpp"

namespace sponge::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
T get(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

fs::path existing(const json& obj, const char* key, const std::string& where) {
  const fs::path p = get<std::string>(obj, key, "");
  if (p.empty()) throw ConfigError(where + "." + key + " is required");
  if (!fs::exists(p)) throw ConfigError(where + "." + key + " does not exist: " + p.string());
  return p;
}

json default_architecture() {
  return json::array({{{"kind", "conv2d"}, {"name", "conv1"}, {"out", 8}, {"kernel", 3}, {"padding", 1}},
                      {{"kind", "relu"}, {"name", "relu1"}},
                      {{"kind", "maxpool"}, {"name", "pool1"}},
                      {{"kind", "conv2d"}, {"name", "conv2"}, {"out", 8}, {"kernel", 3}, {"padding", 1}},
                      {{"kind", "relu"}, {"name", "relu2"}},
                      {{"kind", "dense"}, {"name", "fc"}, {"out", 4}}});
}

DataSpec parse_data(const json& j) {
  DataSpec d;
  reject_unknown(j, {"kind", "name", "classes", "samples_per_class", "shape", "spread", "noise", "clamp_unit",
                     "images", "labels", "test_images", "test_labels", "path", "test_path", "test_fraction"},
                 "dataset");
  d.kind = get<std::string>(j, "kind", "blobs");
  d.name = get<std::string>(j, "name", d.kind);
  d.test_fraction = get<double>(j, "test_fraction", d.test_fraction);
  if (d.kind == "blobs") {
    d.blobs.classes = get<std::size_t>(j, "classes", 4);
    d.blobs.samples_per_class = get<std::size_t>(j, "samples_per_class", 600);
    d.blobs.shape = get<Shape>(j, "shape", Shape{1, 8, 8});
    d.blobs.center_spread = get<double>(j, "spread", 2.0);
    d.blobs.noise = get<double>(j, "noise", 0.5);
    d.blobs.clamp_unit = get<bool>(j, "clamp_unit", true);
  } else if (d.kind == "idx") {
    d.images = existing(j, "images", "dataset");
    d.labels = existing(j, "labels", "dataset");
    if (j.contains("test_images")) {
      d.test_images = existing(j, "test_images", "dataset");
      d.test_labels = existing(j, "test_labels", "dataset");
    }
  } else if (d.kind == "csv") {
    d.path = existing(j, "path", "dataset");
    if (j.contains("test_path")) d.test_path = existing(j, "test_path", "dataset");
  } else {
    throw ConfigError("unknown dataset kind '" + d.kind + "'");
  }
  return d;
}

TrainConfig parse_train(const json& j) {
  reject_unknown(j, {"epochs", "batch_size", "learning_rate", "momentum", "weight_decay"}, "train");
  TrainConfig t;
  t.epochs = get<std::size_t>(j, "epochs", 10);
  t.batch_size = get<std::size_t>(j, "batch_size", 32);
  t.learning_rate = get<double>(j, "learning_rate", 0.02);
  t.momentum = get<double>(j, "momentum", 0.9);
  t.weight_decay = get<double>(j, "weight_decay", 0.0);
  return t;
}

AttackConfig parse_attack(const json& j) {
  reject_unknown(j, {"tau", "alpha", "max_steps_per_bias", "subset", "batch_size"}, "attack");
  AttackConfig a;
  a.tau = get<double>(j, "tau", a.tau);
  a.alpha = get<double>(j, "alpha", a.alpha);
  a.max_steps_per_bias = get<std::size_t>(j, "max_steps_per_bias", 0);
  a.subset_fraction = get<double>(j, "subset", a.subset_fraction);
  a.batch_size = get<std::size_t>(j, "batch_size", a.batch_size);
  return a;
}

PoisonConfig parse_poison(const json& j) {
  reject_unknown(j, {"lambda", "delta", "sigma_l0", "normalized"}, "poison");
  PoisonConfig p;
  p.lambda = get<double>(j, "lambda", p.lambda);
  p.delta = get<double>(j, "delta", p.delta);
  p.sigma_l0 = get<double>(j, "sigma_l0", p.sigma_l0);
  p.normalized = get<bool>(j, "normalized", p.normalized);
  return p;
}

SearchSchedule parse_schedule(const json& j) {
  reject_unknown(j, {"noise_start", "noise_factor", "noise_max_iterations", "noise_trials", "clip_step", "prune_step",
                     "l2_grid", "max_drop"},
                 "schedule");
  SearchSchedule s;
  s.noise_start = get<double>(j, "noise_start", s.noise_start);
  s.noise_factor = get<double>(j, "noise_factor", s.noise_factor);
  s.noise_max_iterations = get<std::size_t>(j, "noise_max_iterations", s.noise_max_iterations);
  s.noise_trials = get<std::size_t>(j, "noise_trials", s.noise_trials);
  s.clip_step = get<double>(j, "clip_step", s.clip_step);
  s.prune_step = get<double>(j, "prune_step", s.prune_step);
  s.l2_grid = get<std::vector<double>>(j, "l2_grid", s.l2_grid);
  s.max_drop = get<double>(j, "max_drop", s.max_drop);
  if (!(s.noise_start > 0.0) || !(s.noise_factor > 1.0) || s.noise_trials == 0 || !(s.clip_step > 0.0) ||
      !(s.prune_step > 0.0) || !(s.max_drop >= 0.0)) {
    throw ConfigError("schedule values out of range");
  }
  return s;
}

CostConstants parse_costs(const json& j) {
  reject_unknown(j, {"mac", "simple", "mem"}, "costs");
  CostConstants c;
  c.mac_energy = get<double>(j, "mac", c.mac_energy);
  c.simple_op_energy = get<double>(j, "simple", c.simple_op_energy);
  c.mem_access_energy = get<double>(j, "mem", c.mem_access_energy);
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

template <typename Writer>
void write_csv(const fs::path& p, Writer&& w) {
  std::ostringstream s;
  w(s);
  write_text(p, s.str());
}

json entry(const Experiment& e, const std::string& method, double perf_before, double perf_after, double ratio_before,
           double ratio_after) {
  return {{"model", e.name},
          {"dataset", e.data.name},
          {"method", method},
          {"performance_before", perf_before},
          {"performance_after", perf_after},
          {"ratio_before", ratio_before},
          {"ratio_after", ratio_after},
          {"ratio_increase", ratio_increase(ratio_before, ratio_after)}};
}

ModelGraph require_model(const Experiment& e) {
  if (!e.model) throw ConfigError("--model (or \"model\" in the config) is required");
  return load_model(*e.model);
}

std::optional<ModelGraph> reference_for(const Experiment& e, const ModelGraph& fallback) {
  if (e.task != Task::reconstruction) return std::nullopt;
  return e.reference_model ? load_model(*e.reference_model) : fallback;
}

Evaluator evaluator_for(const Experiment& e, const Dataset& data, const std::optional<ModelGraph>& reference) {
  return Evaluator(data, e.task, e.eval_batch, e.costs, reference ? &*reference : nullptr);
}

TrainConfig trainer_for(const Experiment& e) {
  TrainConfig t = e.train;
  t.seed = derive_seed(e.seed, "train");
  t.task = e.task;
  return t;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e) ||
      dynamic_cast<const InapplicableError*>(&e)) {
    return config_error;
  }
  if (dynamic_cast<const LoadError*>(&e) || dynamic_cast<const DimensionError*>(&e)) return data_error;
  if (dynamic_cast<const NumericError*>(&e)) return numeric_error;
  return failure;
}

Experiment parse_experiment(const json& doc, const Overrides& o) {
  reject_unknown(doc, {"name", "seed", "out", "model", "reference_model", "task", "dataset", "architecture", "train",
                       "attack", "poison", "defenses", "schedule", "costs", "eval_batch"},
                 "config");
  Experiment e;
  e.name = get<std::string>(doc, "name", e.name);
  e.seed = o.seed.value_or(get<std::uint64_t>(doc, "seed", e.seed));
  e.out = o.out.value_or(get<std::string>(doc, "out", e.out.string()));
  if (o.model || doc.contains("model")) {
    e.model = o.model.value_or(get<std::string>(doc, "model", ""));
    if (!fs::exists(*e.model)) throw ConfigError("model does not exist: " + e.model->string());
  }
  if (doc.contains("reference_model")) e.reference_model = existing(doc, "reference_model", "config");
  try {
    e.task = task_from_string(get<std::string>(doc, "task", "classification"));
  } catch (const Error& err) {
    throw ConfigError(err.what());
  }
  e.data = parse_data(doc.value("dataset", json::object()));
  e.architecture = doc.value("architecture", default_architecture());
  if (!e.architecture.is_array() || e.architecture.empty()) throw ConfigError("architecture must be a non-empty array");
  e.train = parse_train(doc.value("train", json::object()));
  e.attack = parse_attack(doc.value("attack", json::object()));
  e.poison = parse_poison(doc.value("poison", json::object()));
  e.schedule = parse_schedule(doc.value("schedule", json::object()));
  e.costs = parse_costs(doc.value("costs", json::object()));
  e.eval_batch = get<std::size_t>(doc, "eval_batch", e.eval_batch);
  if (e.eval_batch == 0) throw ConfigError("eval_batch must be positive");
  for (const auto& name : doc.value("defenses", json::array({"weight_noise", "bias_noise", "weight_clip", "bias_clip",
                                                             "fine_prune", "l2_finetune"}))) {
    if (!name.is_string()) throw ConfigError("defenses must be a list of names");
    e.defenses.push_back(defense_kind_from_string(name.get<std::string>()));
  }
  if (o.tau) e.attack.tau = *o.tau;
  if (o.alpha) e.attack.alpha = *o.alpha;
  if (o.subset) e.attack.subset_fraction = *o.subset;
  if (o.lambda) e.poison.lambda = *o.lambda;
  if (o.delta) e.poison.delta = *o.delta;
  e.attack.seed = e.seed;
  e.attack.task = e.task;
  e.train.seed = e.seed;
  e.train.task = e.task;
  e.attack.validate();
  e.poison.validate();
  e.train.validate();
  return e;
}

Experiment load_experiment(const std::optional<fs::path>& config, const Overrides& o) {
  json doc = json::object();
  if (config) {
    std::ifstream in(*config);
    if (!in) throw ConfigError("cannot open config " + config->string());
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config " + config->string() + " is not valid JSON: " + e.what());
    }
  }
  return parse_experiment(doc, o);
}

Split load_data(const Experiment& e) {
  const DataSpec& d = e.data;
  auto name = [&](Dataset ds) {
    ds.manifest.name = d.name;
    return ds;
  };
  const std::uint64_t split_seed = derive_seed(e.seed, "split");
  if (d.kind == "blobs") {
    BlobsConfig b = d.blobs;
    b.seed = derive_seed(e.seed, "data");
    Split s = split(synth_blobs(b), d.test_fraction, split_seed);
    return {name(std::move(s.train)), name(std::move(s.test))};
  }
  if (d.kind == "idx") {
    Dataset all = load_idx(d.images, d.labels);
    if (!d.test_images.empty()) return {name(std::move(all)), name(load_idx(d.test_images, d.test_labels))};
    Split s = split(all, d.test_fraction, split_seed);
    return {name(std::move(s.train)), name(std::move(s.test))};
  }
  Dataset all = load_csv(d.path);
  if (!d.test_path.empty()) return {name(std::move(all)), name(load_csv(d.test_path))};
  Split s = split(all, d.test_fraction, split_seed);
  return {name(std::move(s.train)), name(std::move(s.test))};
}

ModelGraph build_architecture(const json& layers, const Shape& input_shape, std::uint64_t seed) {
  ModelBuilder b(input_shape, seed);
  for (const auto& l : layers) {
    reject_unknown(l, {"kind", "name", "out", "kernel", "stride", "padding", "window", "bias", "slope", "eps"},
                   "architecture layer");
    const std::string kind = get<std::string>(l, "kind", "");
    const std::string name = get<std::string>(l, "name", "");
    if (name.empty()) throw ConfigError("architecture layer without a name");
    if (kind == "dense") {
      b.dense(name, get<std::size_t>(l, "out", 0), get<bool>(l, "bias", true));
    } else if (kind == "conv2d") {
      b.conv2d(name, get<std::size_t>(l, "out", 0), get<std::size_t>(l, "kernel", 3), get<std::size_t>(l, "stride", 1),
               get<std::size_t>(l, "padding", 0), get<bool>(l, "bias", true));
    } else if (kind == "relu") {
      b.relu(name);
    } else if (kind == "leaky_relu") {
      b.leaky_relu(name, get<float>(l, "slope", 0.01f));
    } else if (kind == "tanh") {
      b.tanh(name);
    } else if (kind == "maxpool") {
      b.maxpool(name, get<std::size_t>(l, "window", 2), get<std::size_t>(l, "stride", 2));
    } else if (kind == "avgpool") {
      b.avgpool(name, get<std::size_t>(l, "window", 2), get<std::size_t>(l, "stride", 2));
    } else if (kind == "batchnorm") {
      b.batchnorm(name, get<float>(l, "eps", 1e-5f));
    } else {
      throw ConfigError("unknown layer kind '" + kind + "'");
    }
  }
  try {
    return b.build();
  } catch (const DimensionError& err) {
    throw ConfigError(std::string("architecture does not fit the data: ") + err.what());
  }
}

int cmd_train(const Experiment& e, std::ostream& log) {
  const Split data = load_data(e);
  const ModelGraph init =
      e.model ? load_model(*e.model)
              : build_architecture(e.architecture, data.train.manifest.sample_shape, derive_seed(e.seed, "init"));
  fs::create_directories(e.out);
  const TrainResult r = train(init, data.train, trainer_for(e), std::nullopt, &data.test);
  write_csv(e.out / "train_metrics.csv", [&](std::ostream& s) { write_epoch_csv(s, r.epochs); });
  if (!r.ok()) {
    log << "training failed: " << *r.failure << '\n';
    return numeric_error;
  }
  save_model(r.model, e.out / "model.json");
  const EpochMetrics& last = r.epochs.back();
  json summary{{"command", "train"},
               {"artifacts", {"model.json", "train_metrics.csv"}},
               {"entries", json::array({entry(e, "clean", last.performance, last.performance, last.energy_ratio,
                                               last.energy_ratio)})},
               {"test_performance", last.performance},
               {"test_ratio", last.energy_ratio}};
  write_json(e.out / "summary.json", summary);
  log << "trained " << e.name << ": test performance " << last.performance << ", energy ratio " << last.energy_ratio
      << '\n';
  return ok;
}

int cmd_attack(const Experiment& e, std::ostream& log) {
  const ModelGraph clean = require_model(e);
  if (identify_target_layers(clean).pairs.empty()) {
    log << "no sparsity layers: the model has no relu or pooling layer preceded by a biased layer\n";
    return no_targets;
  }
  const Split data = load_data(e);
  const Dataset guard = subset(data.train, e.attack.subset_fraction, derive_seed(e.seed, "attack-subset"));
  const auto reference = reference_for(e, clean);
  const ActivationProfile prof = profile(clean, guard.samples, e.attack.batch_size);
  const AttackResult r = run_skipsponge(clean, prof, e.attack, evaluator_for(e, guard, reference));
  const Evaluator test = evaluator_for(e, data.test, reference);
  const Evaluation before = test(clean), after = test(r.model);

  fs::create_directories(e.out);
  save_model(r.model, e.out / "attacked.json");
  write_json(e.out / "profile.json", json(prof));
  write_csv(e.out / "trace.csv", [&](std::ostream& s) { write_trace_csv(s, r.trace); });
  write_csv(e.out / "layers.csv", [&](std::ostream& s) { write_layer_series_csv(s, r.layers); });
  json summary{{"command", "attack"},
               {"artifacts", {"attacked.json", "profile.json", "trace.csv", "layers.csv"}},
               {"tau", e.attack.tau},
               {"alpha", e.attack.alpha},
               {"subset_size", guard.size()},
               {"guard", json(r)},
               {"test",
                {{"clean_performance", before.performance},
                 {"attacked_performance", after.performance},
                 {"clean_ratio", before.mean_ratio},
                 {"attacked_ratio", after.mean_ratio},
                 {"ratio_increase", ratio_increase(before.mean_ratio, after.mean_ratio)}}},
               {"entries", json::array({entry(e, "skipsponge", before.performance, after.performance,
                                               before.mean_ratio, after.mean_ratio)})}};
  write_json(e.out / "summary.json", summary);
  log << "attack: " << r.accepted_steps() << " accepted steps, test ratio " << before.mean_ratio << " -> "
      << after.mean_ratio << " (+" << ratio_increase(before.mean_ratio, after.mean_ratio) << "%), performance "
      << before.performance << " -> " << after.performance << '\n';
  if (r.abort_reason) {
    log << "attack aborted: " << *r.abort_reason << '\n';
    return numeric_error;
  }
  return ok;
}

int cmd_poison(const Experiment& e, std::ostream& log) {
  const Split data = load_data(e);
  const ModelGraph init =
      e.model ? load_model(*e.model)
              : build_architecture(e.architecture, data.train.manifest.sample_shape, derive_seed(e.seed, "init"));
  const TrainConfig trainer = trainer_for(e);
  const TrainResult clean = train(init, data.train, trainer, std::nullopt, &data.test);
  const TrainResult poisoned = train_poisoned(init, data.train, trainer, e.poison, &data.test);
  fs::create_directories(e.out);
  write_csv(e.out / "clean_metrics.csv", [&](std::ostream& s) { write_epoch_csv(s, clean.epochs); });
  write_csv(e.out / "poison_metrics.csv", [&](std::ostream& s) { write_epoch_csv(s, poisoned.epochs); });
  if (!clean.ok() || !poisoned.ok()) {
    log << "training failed: " << (clean.ok() ? *poisoned.failure : *clean.failure) << '\n';
    return numeric_error;
  }
  save_model(clean.model, e.out / "clean.json");
  save_model(poisoned.model, e.out / "poisoned.json");

  const auto fc = fired_neuron_fractions(clean.model, data.test.samples, e.eval_batch);
  const auto fp = fired_neuron_fractions(poisoned.model, data.test.samples, e.eval_batch);
  write_csv(e.out / "fired.csv", [&](std::ostream& s) {
    s << "layer,kind,clean,poisoned\n";
    for (std::size_t i = 0; i < fc.size(); ++i)
      s << fc[i].layer << ',' << to_string(fc[i].kind) << ',' << fc[i].fraction << ',' << fp[i].fraction << '\n';
  });
  const auto bc = mean_bias_values(clean.model), bp = mean_bias_values(poisoned.model);
  write_csv(e.out / "mean_bias.csv", [&](std::ostream& s) {
    s << "layer,clean,poisoned\n";
    for (std::size_t i = 0; i < bc.size(); ++i) s << bc[i].layer << ',' << bc[i].mean << ',' << bp[i].mean << '\n';
  });
  const EpochMetrics &c = clean.epochs.back(), &p = poisoned.epochs.back();
  json summary{{"command", "poison"},
               {"artifacts", {"clean.json", "poisoned.json", "clean_metrics.csv", "poison_metrics.csv", "fired.csv",
                              "mean_bias.csv"}},
               {"lambda", e.poison.lambda},
               {"delta", e.poison.delta},
               {"sigma_l0", e.poison.sigma_l0},
               {"flagged_samples", poisoned.flagged.size()},
               {"entries", json::array({entry(e, "sponge-poisoning", c.performance, p.performance, c.energy_ratio,
                                               p.energy_ratio)})}};
  write_json(e.out / "summary.json", summary);
  log << "poisoning: test ratio " << c.energy_ratio << " -> " << p.energy_ratio << ", performance " << c.performance
      << " -> " << p.performance << '\n';
  return ok;
}

int cmd_defend(const Experiment& e, std::ostream& log) {
  const ModelGraph attacked = require_model(e);
  const Split data = load_data(e);
  const auto reference = reference_for(e, attacked);
  const Evaluator test = evaluator_for(e, data.test, reference);
  TrainConfig trainer = trainer_for(e);
  trainer.epochs = retrain_epochs(e.train.epochs);
  const std::uint64_t noise_seed = derive_seed(e.seed, "defense-noise");

  std::vector<DefenseOutcome> rows;
  json entries = json::array();
  for (DefenseKind kind : e.defenses) {
    std::vector<DefenseOutcome> found;
    try {
      switch (kind) {
        case DefenseKind::weight_noise: found = search_noise_weights(attacked, test, e.schedule, noise_seed); break;
        case DefenseKind::bias_noise: found = search_noise_biases(attacked, test, e.schedule, noise_seed); break;
        case DefenseKind::weight_clip: found = search_clip_weights(attacked, test, e.schedule); break;
        case DefenseKind::bias_clip: found = search_clip_biases(attacked, test, e.schedule); break;
        case DefenseKind::fine_prune:
          found = search_fine_prune(attacked, test, e.schedule, data.train, trainer);
          break;
        case DefenseKind::l2_finetune: found = sweep_l2(attacked, test, e.schedule, data.train, trainer); break;
      }
    } catch (const InapplicableError& err) {
      DefenseOutcome o;
      o.kind = kind;
      o.applicable = false;
      o.note = err.what();
      found.push_back(o);
    }
    // the strongest accepted setting stands for the defense
    const auto best = std::find_if(found.rbegin(), found.rend(), [](const DefenseOutcome& r) { return r.accepted; });
    if (best != found.rend()) {
      const DefenseOutcome& r = *best;
      entries.push_back(entry(e, "defense:" + std::string(to_string(kind)), r.performance_before, r.performance_after,
                              r.ratio_before, r.ratio_after));
      entries.back()["strength"] = r.strength;
      entries.back()["trials"] = r.trials;
    }
    const bool applicable = found.empty() || found.front().applicable;
    log << to_string(kind) << ": " << (applicable ? std::to_string(found.size()) + " rows" : "inapplicable") << '\n';
    rows.insert(rows.end(), found.begin(), found.end());
  }
  fs::create_directories(e.out);
  write_csv(e.out / "defenses.csv", [&](std::ostream& s) { write_defense_csv(s, rows); });
  write_json(e.out / "summary.json",
             json{{"command", "defend"}, {"artifacts", {"defenses.csv"}}, {"entries", entries}});
  return ok;
}

int cmd_energy(const Experiment& e, std::ostream& log) {
  const ModelGraph model = require_model(e);
  const Split data = load_data(e);
  const Tensor& x = data.test.samples;
  EnergyReport total;
  std::vector<double> ratios;
  for (std::size_t begin = 0; begin < data.test.size(); begin += e.eval_batch) {
    const EnergyReport r = energy_ratio(model, data.test.rows(begin, std::min(x.dim(0), begin + e.eval_batch)), e.costs);
    ratios.push_back(r.ratio);
    if (begin == 0) {
      total = r;
    } else {
      total.merge(r, e.costs);
    }
  }
  fs::create_directories(e.out);
  json j = total;
  j["mean_batch_ratio"] = mean_ratio(ratios);
  j["samples"] = data.test.size();
  write_json(e.out / "energy.json", j);
  write_csv(e.out / "energy.csv", [&](std::ostream& s) { write_energy_csv(s, total); });
  write_json(e.out / "summary.json",
             json{{"command", "energy"}, {"artifacts", {"energy.json", "energy.csv"}}, {"entries", json::array()}});
  log << "energy ratio " << total.ratio << " (mean over batches " << mean_ratio(ratios) << ")\n";
  return ok;
}

int cmd_report(const fs::path& run_dir, std::ostream& log) {
  if (!fs::is_directory(run_dir)) throw ConfigError("run directory does not exist: " + run_dir.string());
  std::vector<fs::path> runs;
  for (const auto& d : fs::directory_iterator(run_dir))
    if (d.is_directory()) runs.push_back(d.path());
  std::sort(runs.begin(), runs.end());

  std::vector<std::string> missing, inconsistent;
  std::map<std::tuple<std::string, std::string, std::string>, json> rows;
  for (const auto& run : runs) {
    const fs::path summary_path = run / "summary.json";
    if (!fs::exists(summary_path)) {
      missing.push_back((run.filename() / "summary.json").string());
      continue;
    }
    json s;
    try {
      std::ifstream in(summary_path);
      s = json::parse(in);
    } catch (const json::exception&) {
      missing.push_back((run.filename() / "summary.json").string() + " (unreadable)");
      continue;
    }
    for (const auto& a : s.value("artifacts", json::array()))
      if (!fs::exists(run / a.get<std::string>())) missing.push_back((run.filename() / a.get<std::string>()).string());
    for (auto row : s.value("entries", json::array())) {
      const double before = row.at("ratio_before").get<double>(), after = row.at("ratio_after").get<double>();
      const double recomputed = ratio_increase(before, after);
      if (std::abs(recomputed - row.at("ratio_increase").get<double>()) > 1e-9 * std::max(1.0, std::abs(recomputed))) {
        inconsistent.push_back(run.filename().string() + ": " + row.at("method").get<std::string>());
      }
      row["ratio_increase"] = recomputed;
      row["run"] = run.filename().string();
      rows[{row.at("model").get<std::string>(), row.at("dataset").get<std::string>(),
            row.at("method").get<std::string>()}] = row;
    }
  }
  if (runs.empty()) missing.push_back("(no run directories)");

  json report{{"rows", json::array()}, {"missing", missing}, {"inconsistent", inconsistent}};
  std::ostringstream csv;
  csv << "model,dataset,method,run,performance_before,performance_after,ratio_before,ratio_after,ratio_increase\n";
  for (const auto& [key, row] : rows) {
    report["rows"].push_back(row);
    csv << row["model"].get<std::string>() << ',' << row["dataset"].get<std::string>() << ','
        << row["method"].get<std::string>() << ',' << row["run"].get<std::string>() << ','
        << row["performance_before"].dump() << ',' << row["performance_after"].dump() << ','
        << row["ratio_before"].dump() << ',' << row["ratio_after"].dump() << ',' << row["ratio_increase"].dump()
        << '\n';
  }
  write_json(run_dir / "report.json", report);
  write_text(run_dir / "report.csv", csv.str());
  log << rows.size() << " rows from " << runs.size() << " runs\n";
  for (const auto& m : missing) log << "missing: " << m << '\n';
  for (const auto& m : inconsistent) log << "inconsistent ratio increase: " << m << '\n';
  return missing.empty() && inconsistent.empty() ? ok : data_error;
}

}  // namespace sponge::cli

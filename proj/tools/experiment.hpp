#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sponge/datasets.hpp"
#include "sponge/defenses.hpp"
#include "sponge/energy.hpp"
#include "sponge/evaluation.hpp"
#include "sponge/poison.hpp"
#include "sponge/skipsponge.hpp"

namespace sponge::cli {

enum ExitCode : int { ok = 0, failure = 1, config_error = 2, data_error = 3, numeric_error = 4, no_targets = 5 };

// Command-line values that take precedence over the JSON document.
struct Overrides {
  std::optional<std::string> model;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
  std::optional<double> alpha;
  std::optional<double> lambda;
  std::optional<double> delta;
  std::optional<double> subset;
};

struct DataSpec {
  std::string kind = "blobs";  // blobs | idx | csv
  std::string name;
  BlobsConfig blobs;
  std::filesystem::path images, labels, test_images, test_labels;  // idx
  std::filesystem::path path, test_path;                           // csv
  double test_fraction = 1.0 / 6.0;  // used when no separate test files are given
};

struct Experiment {
  std::string name = "model";
  std::uint64_t seed = 1;
  std::filesystem::path out = "run";
  std::optional<std::filesystem::path> model;
  std::optional<std::filesystem::path> reference_model;
  Task task = Task::classification;
  DataSpec data;
  nlohmann::json architecture;  // array of layer objects
  TrainConfig train;
  AttackConfig attack;
  PoisonConfig poison;
  std::vector<DefenseKind> defenses;
  SearchSchedule schedule;
  CostConstants costs;
  std::size_t eval_batch = 64;
};

// Missing keys take defaults; unknown keys, bad values and missing paths
// raise ConfigError.
Experiment parse_experiment(const nlohmann::json& doc, const Overrides& overrides = {});
Experiment load_experiment(const std::optional<std::filesystem::path>& config, const Overrides& overrides = {});

Split load_data(const Experiment& e);
ModelGraph build_architecture(const nlohmann::json& layers, const Shape& input_shape, std::uint64_t seed);

int cmd_train(const Experiment& e, std::ostream& log);
int cmd_attack(const Experiment& e, std::ostream& log);
int cmd_poison(const Experiment& e, std::ostream& log);
int cmd_defend(const Experiment& e, std::ostream& log);
int cmd_energy(const Experiment& e, std::ostream& log);
// Merges the summary.json of every direct subdirectory of `run_dir` into
// report.json and report.csv inside `run_dir`.
int cmd_report(const std::filesystem::path& run_dir, std::ostream& log);

// Runs `fn`, translating library exceptions into exit codes.
template <typename Fn>
int guarded(std::ostream& log, Fn&& fn);

int exit_code_for(const std::exception& e);

template <typename Fn>
int guarded(std::ostream& log, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace sponge::cli

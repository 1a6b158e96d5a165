#include <iostream>

#include <CLI11.hpp>

#include "experiment.hpp"

namespace cli = sponge::cli;

namespace {

struct Flags {
  std::string config;
  cli::Overrides o;
};

void add_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "experiment JSON document");
  sub->add_option("--model", f.o.model, "model header (.json)");
  sub->add_option("--out", f.o.out, "output directory");
  sub->add_option("--seed", f.o.seed, "root seed");
  sub->add_option("--tau", f.o.tau, "allowed performance drop in points");
  sub->add_option("--alpha", f.o.alpha, "bias step in units of sigma");
  sub->add_option("--lambda", f.o.lambda, "sponge loss weight");
  sub->add_option("--delta", f.o.delta, "fraction of poisoned samples");
  sub->add_option("--subset", f.o.subset, "attacker data fraction");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sponge attack lab: energy simulation, SkipSponge, sponge poisoning and defenses"};
  app.require_subcommand(1);
  Flags flags;
  std::string run_dir;

  struct Verb {
    const char* name;
    const char* help;
    int (*fn)(const cli::Experiment&, std::ostream&);
  };
  const Verb verbs[] = {{"train", "train a clean model", cli::cmd_train},
                        {"attack", "run SkipSponge on a trained model", cli::cmd_attack},
                        {"poison", "train clean and sponge-poisoned models", cli::cmd_poison},
                        {"defend", "run defense searches on an attacked model", cli::cmd_defend},
                        {"energy", "energy report of a model on the test split", cli::cmd_energy}};
  std::vector<std::pair<CLI::App*, const Verb*>> subs;
  for (const auto& v : verbs) {
    CLI::App* sub = app.add_subcommand(v.name, v.help);
    add_flags(sub, flags);
    subs.emplace_back(sub, &v);
  }
  CLI::App* report = app.add_subcommand("report", "merge run summaries into comparison tables");
  report->add_option("run_dir", run_dir, "directory holding one subdirectory per run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::config_error;
  }

  if (report->parsed()) return cli::guarded(std::cout, [&] { return cli::cmd_report(run_dir, std::cout); });
  for (const auto& [sub, verb] : subs) {
    if (!sub->parsed()) continue;
    return cli::guarded(std::cout, [&] {
      const auto config = flags.config.empty() ? std::nullopt : std::optional<std::filesystem::path>(flags.config);
      return verb->fn(cli::load_experiment(config, flags.o), std::cout);
    });
  }
  return cli::failure;
}

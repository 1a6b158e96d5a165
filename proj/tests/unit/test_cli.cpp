#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "experiment.hpp"
#include "sponge/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sponge;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("sponge_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  fs::path config(const json& j, const std::string& name = "cfg.json") {
    const fs::path p = dir / name;
    std::ofstream(p) << j.dump();
    return p;
  }

  // exit status of the real binary
  int run(const std::string& args) {
    const std::string cmd = std::string(SPONGE_LAB_BIN) + " " + args + " > " + (dir / "log.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  fs::path dir;
  const json small{{"name", "m"}, {"seed", 5}, {"train", {{"epochs", 2}}},
                   {"dataset", {{"classes", 3}, {"samples_per_class", 60}}},
                   {"schedule", {{"noise_trials", 1}, {"noise_max_iterations", 3}}}};
};

}  // namespace

TEST_F(CliTest, FlagsOverrideConfig) {
  json j = small;
  j["attack"] = {{"tau", 1.0}, {"alpha", 0.5}};
  j["poison"] = {{"lambda", 2.0}, {"delta", 0.3}};
  cli::Overrides o;
  o.tau = 3.0;
  o.delta = 0.9;
  o.seed = 77;
  const cli::Experiment e = cli::parse_experiment(j, o);
  EXPECT_EQ(e.attack.tau, 3.0);
  EXPECT_EQ(e.attack.alpha, 0.5);
  EXPECT_EQ(e.poison.lambda, 2.0);
  EXPECT_EQ(e.poison.delta, 0.9);
  EXPECT_EQ(e.seed, 77u);
}

TEST_F(CliTest, ConfigValidation) {
  EXPECT_THROW(cli::parse_experiment(json{{"nonsense", 1}}), ConfigError);
  EXPECT_THROW(cli::parse_experiment(json{{"train", {{"epoch", 3}}}}), ConfigError);
  EXPECT_THROW(cli::parse_experiment(json{{"dataset", {{"kind", "csv"}, {"path", "/no/such/file.csv"}}}}), ConfigError);
  EXPECT_THROW(cli::parse_experiment(json{{"defenses", {"prayer"}}}), ConfigError);
  EXPECT_THROW(cli::parse_experiment(json{{"model", "/no/such/model.json"}}), ConfigError);
  EXPECT_THROW(cli::parse_experiment(json{{"costs", {{"mac", -1.0}}}}), ConfigError);
  EXPECT_THROW(cli::parse_experiment(json{{"seed", "abc"}}), ConfigError);
}

TEST_F(CliTest, ExitCodeMapping) {
  EXPECT_EQ(cli::exit_code_for(ConfigError("x")), cli::config_error);
  EXPECT_EQ(cli::exit_code_for(LoadError("x")), cli::data_error);
  EXPECT_EQ(cli::exit_code_for(NumericError("x")), cli::numeric_error);
  EXPECT_EQ(cli::exit_code_for(std::runtime_error("x")), cli::failure);
}

TEST_F(CliTest, PipelineIsDeterministicAndReportable) {
  const fs::path cfg = config(small);
  for (const std::string name : {"a", "b"}) {
    const fs::path root = dir / name;
    ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (root / "train").string()), 0);
    ASSERT_EQ(run("attack --config " + cfg.string() + " --model " + (root / "train/model.json").string() + " --out " +
                  (root / "attack").string()),
              0);
    ASSERT_EQ(run("energy --config " + cfg.string() + " --model " + (root / "attack/attacked.json").string() +
                  " --out " + (root / "energy").string()),
              0);
    ASSERT_EQ(run("report " + root.string()), 0);
  }
  for (const char* f : {"train/model.bin", "train/train_metrics.csv", "attack/trace.csv", "attack/layers.csv",
                        "attack/summary.json", "energy/energy.csv", "report.json", "report.csv"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  const std::string first = slurp(dir / "a/report.json");
  ASSERT_EQ(run("report " + (dir / "a").string()), 0);
  EXPECT_EQ(slurp(dir / "a/report.json"), first);

  const json rep = json::parse(first);
  ASSERT_EQ(rep["rows"].size(), 2u);
  EXPECT_EQ(rep["rows"][0]["method"], "clean");
  EXPECT_EQ(rep["rows"][1]["method"], "skipsponge");
  const json& atk = rep["rows"][1];
  EXPECT_NEAR(atk["ratio_increase"].get<double>(),
              100.0 * (atk["ratio_after"].get<double>() - atk["ratio_before"].get<double>()) /
                  atk["ratio_before"].get<double>(),
              1e-9);
}

TEST_F(CliTest, ReportFlagsMissingArtifacts) {
  const fs::path cfg = config(small);
  ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (dir / "runs/train").string()), 0);
  fs::remove(dir / "runs/train/train_metrics.csv");
  EXPECT_NE(run("report " + (dir / "runs").string()), 0);
  const json rep = json::parse(slurp(dir / "runs/report.json"));
  ASSERT_EQ(rep["missing"].size(), 1u);
  EXPECT_NE(rep["missing"][0].get<std::string>().find("train_metrics.csv"), std::string::npos);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run("train --config " + config(json{{"nonsense", 1}}).string()), cli::config_error);
  EXPECT_EQ(run("train --no-such-flag"), cli::config_error);
  EXPECT_EQ(run("train --config " + (dir / "absent.json").string()), cli::config_error);

  std::ofstream(dir / "junk.idx", std::ios::binary) << "definitely not idx";
  EXPECT_EQ(run("train --config " +
                config(json{{"dataset", {{"kind", "idx"}, {"images", (dir / "junk.idx").string()},
                                         {"labels", (dir / "junk.idx").string()}}}}, "idx.json").string() +
                " --out " + (dir / "x").string()),
            cli::data_error);

  json diverge = small;
  diverge["train"] = {{"epochs", 3}, {"learning_rate", 1e30}};
  EXPECT_EQ(run("train --config " + config(diverge, "div.json").string() + " --out " + (dir / "div").string()),
            cli::numeric_error);
  EXPECT_TRUE(fs::exists(dir / "div/train_metrics.csv"));

  json linear = small;
  linear["architecture"] = json::array({{{"kind", "dense"}, {"name", "fc1"}, {"out", 6}},
                                        {{"kind", "tanh"}, {"name", "t"}},
                                        {{"kind", "dense"}, {"name", "fc2"}, {"out", 3}}});
  const fs::path lcfg = config(linear, "lin.json");
  ASSERT_EQ(run("train --config " + lcfg.string() + " --out " + (dir / "lin").string()), 0);
  EXPECT_EQ(run("attack --config " + lcfg.string() + " --model " + (dir / "lin/model.json").string() + " --out " +
                (dir / "lin_atk").string()),
            cli::no_targets);
  EXPECT_NE(slurp(dir / "log.txt").find("no sparsity layers"), std::string::npos);
}

TEST_F(CliTest, DefendMarksInapplicableRows) {
  json linear = small;
  linear["architecture"] = json::array({{{"kind", "dense"}, {"name", "fc1"}, {"out", 6}},
                                        {{"kind", "relu"}, {"name", "r"}},
                                        {{"kind", "dense"}, {"name", "fc2"}, {"out", 3}}});
  linear["defenses"] = {"bias_clip", "weight_noise"};
  const fs::path cfg = config(linear);
  ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (dir / "t").string()), 0);
  ASSERT_EQ(run("defend --config " + cfg.string() + " --model " + (dir / "t/model.json").string() + " --out " +
                (dir / "d").string()),
            0);
  const std::string csv = slurp(dir / "d/defenses.csv");
  EXPECT_NE(csv.find("weight_noise,-"), std::string::npos);
}

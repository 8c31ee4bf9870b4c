#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "oocdm/harness.hpp"

namespace {

int stage_exit_code(const std::string& stage) {
  static const std::map<std::string, int> codes = {
      {"config", 2}, {"collect", 3}, {"train", 4},  {"discover", 5},
      {"eval", 6},   {"plan", 7},    {"report", 8}, {"io", 9},
      {"checkpoint", 10}};
  auto it = codes.find(stage);
  return it == codes.end() ? 1 : it->second;
}

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--out", args.out, "override the output directory");
}

oocdm::ExperimentConfig resolve(const CommonArgs& args) {
  oocdm::ExperimentConfig cfg = oocdm::load_experiment_config(args.config_path);
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.train.seed = *args.seed;
  }
  if (args.out) cfg.out_dir = *args.out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"object-oriented causal dynamics model toolkit"};
  app.require_subcommand(1);

  std::map<std::string, CommonArgs> args;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"collect", "collect transition datasets"},
      {"train", "train the dynamics model"},
      {"discover", "run causal discovery on the trained model"},
      {"eval", "evaluate log-likelihood suites"},
      {"plan", "evaluate CEM/MPC planning"},
      {"report", "assemble the report from stage artifacts"},
      {"all", "run the whole pipeline"}};
  for (const auto& [name, desc] : commands) add_common(app.add_subcommand(name, desc), args[name]);

  CLI11_PARSE(app, argc, argv);

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    const oocdm::ExperimentConfig cfg = resolve(args[cmd]);
    using oocdm::stage_collect;
    if (cmd == "collect") {
      stage_collect(cfg);
    } else if (cmd == "train") {
      oocdm::stage_train(cfg);
    } else if (cmd == "discover") {
      oocdm::stage_discover(cfg);
    } else if (cmd == "eval") {
      oocdm::stage_eval(cfg);
    } else if (cmd == "plan") {
      oocdm::stage_plan(cfg);
    } else if (cmd == "report") {
      oocdm::stage_report(cfg);
    } else {
      oocdm::Report report = oocdm::run_experiment(cfg);
      std::cout << oocdm::report_to_csv(report);
    }
  } catch (const oocdm::StageError& e) {
    std::cerr << e.what() << "\n";
    return stage_exit_code(e.stage);
  } catch (const std::exception& e) {
    std::cerr << "[" << cmd << "] " << e.what() << "\n";
    return 1;
  }
  return 0;
}

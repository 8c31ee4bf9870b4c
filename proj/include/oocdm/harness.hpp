#pragma once

#include <map>
#include <optional>
#include <string>

#include "nlohmann/json.hpp"
#include "oocdm/planning.hpp"
#include "oocdm/training.hpp"

namespace oocdm {

// stage-tagged failure surfaced by the CLI
struct StageError : std::runtime_error {
  StageError(std::string stage_, const std::string& what)
      : std::runtime_error("[" + stage_ + "] " + what), stage(std::move(stage_)) {}
  std::string stage;
};

struct DataConfig {
  int train_steps = 10000;
  int id_steps = 2000;
  int ood_steps = 2000;  // 0 disables the o.o.d. suite
  double noise_sigma = 0.0;
  std::string policy;  // empty: the environment's default
  // varying-count mode: tasks drawn from per-class ranges, split into seen
  // and unseen pools by a seeded shuffle
  bool varying = false;
  std::vector<std::pair<std::string, std::pair<int, int>>> count_ranges;
  double seen_fraction = 0.47;
};

struct PlanEvalConfig {
  bool enabled = false;
  PlanConfig plan;
  int episodes = 5;
  bool ood = false;
  bool oracle = false;     // also run the true-simulator planner
  bool random_baseline = false;
};

struct ExperimentConfig {
  EnvConfig env;
  DataConfig data;
  std::string mode = "oocdm";  // oocdm | oofull | mlp
  bool augmented = false;
  ModelDims dims;
  TrainConfig train;
  PlanEvalConfig planning;
  std::vector<std::string> suites;  // subset of train/id/ood/seen/unseen
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  void validate() const;
  bool count_ranges_empty() const;
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::string& path);

struct AillRow {
  std::string suite;
  double value = 0.0;
  bool finite = true;
};

struct PlanRow {
  std::string policy;  // model | oracle | random
  double mean_return = 0.0;
  std::vector<double> episode_returns;
};

struct Report {
  nlohmann::json meta;
  double graph_accuracy = -1.0;  // -1 when no ground truth exists
  std::vector<AillRow> aill;
  std::vector<PlanRow> plan;
  CmiReport cmis;
  double discovery_seconds = 0.0;  // provenance; excluded from report bytes
  TrainHistory history;
};

// deterministic artifact (no timing inside)
nlohmann::json report_to_json(const Report& report);
std::string report_to_csv(const Report& report);

// Trained-model bundle on disk: <stem>.json manifest + <stem>.bin blob.
struct ModelBundle {
  TrainMode mode = TrainMode::kOocdm;
  std::shared_ptr<OocdmModel> oocdm;
  std::shared_ptr<MlpBaseline> mlp;
  Oocg graph;  // evaluation graph of the bundle
  std::uint64_t config_hash = 0;
};

void save_checkpoint(const std::string& stem, const ModelBundle& bundle);
ModelBundle load_checkpoint(const std::string& stem, const OomdpSchema& expected_schema);

// AILL per named dataset under the bundle's evaluation graph; non-finite
// values are flagged, not fatal.
std::vector<AillRow> eval_likelihood(const ModelBundle& bundle,
                                     const std::vector<std::pair<std::string, const Dataset*>>&
                                         datasets,
                                     int threads = 1);

// full pipeline: collect -> train -> discover -> evaluate -> plan -> report;
// every random draw derives from cfg.seed. Writes artifacts into cfg.out_dir.
Report run_experiment(const ExperimentConfig& cfg);

// individual stages (shared by the CLI subcommands); all operate on files in
// the out directory
void stage_collect(const ExperimentConfig& cfg);
void stage_train(const ExperimentConfig& cfg);
void stage_discover(const ExperimentConfig& cfg);
void stage_eval(const ExperimentConfig& cfg);
void stage_plan(const ExperimentConfig& cfg);
void stage_report(const ExperimentConfig& cfg);

}  // namespace oocdm

#pragma once

#include <memory>
#include <optional>

#include "nlohmann/json_fwd.hpp"
#include "oocdm/discovery.hpp"
#include "oocdm/model.hpp"

namespace oocdm {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int n_iter = 50;
  int n_batch = 1000;
  int batch_size = 128;
  double lambda = 0.9;
  double alpha = 1.0;
  double beta = 1.0;
  double epsilon = 0.3;
  AdamConfig adam;
  std::uint64_t seed = 0;
  // per-iteration discovery runs on a uniform subsample of this size to bound
  // cost; 0 disables subsampling. The final graph is recomputed on all data.
  int discovery_subsample = 2048;
  // skip the final full-dataset discovery (callers that time it themselves)
  bool recompute_final_graph = true;
  int threads = 1;

  void validate() const;
};

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);

struct IterationStats {
  int iteration = 0;
  double mean_objective = 0.0;
  double graph_accuracy = -1.0;  // vs supplied truth, when available
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<IterationStats> iterations;
};

nlohmann::json history_to_json(const TrainHistory& h);

enum class TrainMode { kOocdm, kOofull, kMlp };
TrainMode train_mode_from_string(const std::string& s);
std::string to_string(TrainMode m);

// Eq.-8 average instance log-likelihood: per class, log-probs normalized by
// total instance-steps, then summed over classes. Absent classes contribute 0.
double aill(const OocdmModel& model, const RecordRefs& records, const Oocg& graph,
            int threads = 1);
double aill(const MlpBaseline& model, const RecordRefs& records, int threads = 1);

// Eq.-9 target: a fresh random graph term plus weighted full-graph and
// discovered-graph terms. Returns the ascent objective; accumulates gradients
// when grads is non-null.
double target_j(const OocdmModel& model, const RecordRefs& batch, const Oocg& graph_hat,
                const TrainConfig& cfg, Rng& rng, GradMap* grads = nullptr);

struct TrainedModel {
  TrainMode mode = TrainMode::kOocdm;
  std::shared_ptr<OocdmModel> oocdm;  // oocdm / oofull
  std::shared_ptr<MlpBaseline> mlp;   // mlp only
  Oocg graph_hat;                     // discovered graph (full graph for oofull)
  TrainHistory history;
  CmiReport final_report;  // oocdm only
};

// Alternating discover/ascend loop (oocdm), plain likelihood ascent (oofull)
// or dense baseline training (mlp). Deterministic given cfg.seed.
TrainedModel train(const OomdpSchema& schema, const Dataset& dataset, const ModelDims& dims,
                   TrainMode mode, const TrainConfig& cfg,
                   const BipartiteAdjacency* truth = nullptr,
                   const InstanceLayout* truth_layout = nullptr, bool augmented = false);

}  // namespace oocdm

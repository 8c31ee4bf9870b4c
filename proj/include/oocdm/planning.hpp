#pragma once

#include <functional>
#include <optional>

#include "oocdm/envs.hpp"
#include "oocdm/model.hpp"

namespace oocdm {

struct PlanError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PlanConfig {
  int horizon = 20;  // H
  int n_plan = 5;
  int k = 500;
  int k_star = 100;
  double gamma = 0.95;
  // sample next states from the predictive distributions (the literal
  // algorithm) or propagate means
  bool sample_next = true;

  void validate() const;
};

// One action scalar slot of the sequence distribution.
struct CemSlot {
  bool categorical = false;
  int card = 0;
  std::vector<double> probs;  // categorical
  double mean = 0.0;
  double stddev = 1.0;
};

struct CemDistribution {
  std::vector<std::vector<CemSlot>> slots;  // [timestep][action slot]
};

// maximum-likelihood refits from elite samples (categorical smoothed by the
// add-one/cardinality floor)
CemSlot refit_categorical(const std::vector<int>& elite_values, int card);
CemSlot refit_gaussian(const std::vector<double>& elite_values);
// indices of the k_star highest returns, ties broken by sample index
std::vector<int> top_indices(const std::vector<double>& returns, int k_star);

// Dynamics used for imagined rollouts: advances a batch of flat (S, A) rows
// and returns next-state values in S' layout.
class RolloutModel {
 public:
  virtual ~RolloutModel() = default;
  virtual std::vector<std::vector<double>> next_states(
      const std::vector<std::vector<double>>& sa_rows, Rng& rng) = 0;
};

class LearnedRollout : public RolloutModel {
 public:
  LearnedRollout(const OocdmModel& model, Oocg graph, std::vector<int> counts,
                 bool sample_next)
      : model_(model), graph_(std::move(graph)), counts_(std::move(counts)),
        sample_(sample_next) {}
  std::vector<std::vector<double>> next_states(
      const std::vector<std::vector<double>>& sa_rows, Rng& rng) override;

 private:
  const OocdmModel& model_;
  Oocg graph_;
  std::vector<int> counts_;
  bool sample_;
};

class MlpRollout : public RolloutModel {
 public:
  MlpRollout(const MlpBaseline& model, bool sample_next)
      : model_(model), sample_(sample_next) {}
  std::vector<std::vector<double>> next_states(
      const std::vector<std::vector<double>>& sa_rows, Rng& rng) override;

 private:
  const MlpBaseline& model_;
  bool sample_;
};

// oracle dynamics: the true simulator stands in for the model
class SimulatorRollout : public RolloutModel {
 public:
  explicit SimulatorRollout(const Env& env) : env_(env) {}
  std::vector<std::vector<double>> next_states(
      const std::vector<std::vector<double>>& sa_rows, Rng& rng) override;

 private:
  const Env& env_;
};

using RewardFn =
    std::function<double(const std::vector<double>& sa, const std::vector<double>& next_sa)>;
RewardFn make_reward_fn(const Env& env);

// test seam: fully determines the sampled action sequences when set
using ActionOverride = std::function<double(int iteration, int sample, int t, int slot)>;

// Cross-entropy planning: iteratively refit the action-sequence distribution
// to the elite rollouts; returns the first action of the best final sequence.
std::vector<double> cem_plan(RolloutModel& model, const RewardFn& reward,
                             const InstanceLayout& layout, const std::vector<double>& state_sa,
                             const PlanConfig& cfg, Rng& rng,
                             const ActionOverride* override_sampler = nullptr);

// Receding-horizon control in the real environment with true rewards.
double mpc_episode(const Env& env, RolloutModel& model, const PlanConfig& cfg, Rng& rng,
                   bool ood);

}  // namespace oocdm

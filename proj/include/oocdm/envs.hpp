#pragma once

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "oocdm/dataset.hpp"
#include "oocdm/rng.hpp"
#include "oocdm/schema.hpp"

namespace oocdm {

struct EnvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Transition noise provider. Simulators announce the instance they are about
// to draw for, which lets tests pin per-instance noise streams.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual void begin_instance(int class_idx, int instance_idx) {
    (void)class_idx;
    (void)instance_idx;
  }
  virtual double normal(double mean, double stddev) = 0;
  virtual std::uint64_t uniform_int(std::uint64_t n) = 0;
};

class RngNoise : public NoiseSource {
 public:
  explicit RngNoise(Rng& rng) : rng_(rng) {}
  double normal(double mean, double stddev) override { return rng_.normal(mean, stddev); }
  std::uint64_t uniform_int(std::uint64_t n) override { return rng_.uniform_int(n); }

 private:
  Rng& rng_;
};

class ZeroNoise : public NoiseSource {
 public:
  double normal(double mean, double /*stddev*/) override { return mean; }
  std::uint64_t uniform_int(std::uint64_t /*n*/) override { return 0; }
};

struct EnvState {
  std::vector<double> sa;  // full (S, A) scalar layout; action slots zero
  int step = 0;
  bool terminal = false;
};

struct StepResult {
  EnvState next;
  double reward = 0.0;
  bool done = false;
};

struct EnvConfig {
  std::string name;  // "block" | "asymblock" | "mouse"
  std::unordered_map<std::string, int> counts;
};

class Env {
 public:
  virtual ~Env() = default;
  const OomdpSchema& schema() const { return layout_.schema(); }
  const InstanceLayout& layout() const { return layout_; }
  const std::string& name() const { return name_; }

  virtual EnvState reset(Rng& rng, bool ood) const = 0;
  // pure dynamics: next state, reward and termination from (s, a)
  StepResult step(const EnvState& state, const std::vector<double>& actions,
                  NoiseSource& noise) const;
  virtual Oocg ground_truth_graph() const = 0;
  // true grounded variable-level graph (differs from grounding the OOCG only
  // when the dynamics are asymmetric)
  virtual BipartiteAdjacency ground_truth_adjacency() const;
  virtual int episode_cap() const = 0;
  virtual std::string default_policy() const = 0;
  virtual bool has_ood_variant() const { return true; }
  virtual bool has_reward() const { return false; }

  // scalar count of the compact action vector
  int action_width() const;
  void validate_actions(const std::vector<double>& actions) const;
  // writes a compact action vector into the action slots of an sa vector
  void scatter_actions(std::vector<double>& sa, const std::vector<double>& actions) const;
  // reads the compact action vector out of an sa vector
  std::vector<double> gather_actions(const std::vector<double>& sa) const;
  double reward_between(const EnvState& state, const EnvState& next) const {
    return reward(state, next);
  }

 protected:
  explicit Env(std::string name, InstanceLayout layout)
      : name_(std::move(name)), layout_(std::move(layout)) {}
  virtual void transition(const EnvState& state, NoiseSource& noise,
                          EnvState& next) const = 0;
  virtual double reward(const EnvState& state, const EnvState& next) const = 0;
  virtual bool is_terminal(const EnvState& next) const = 0;

  std::string name_;
  InstanceLayout layout_;
};

std::unique_ptr<Env> make_env(const EnvConfig& cfg);

// Fresh instance counts per episode: either independent inclusive ranges per
// class, or a uniform draw from an explicit pool of count configurations.
struct CountSampler {
  std::vector<std::pair<std::string, std::pair<int, int>>> ranges;
  std::vector<std::unordered_map<std::string, int>> pool;
};

Dataset collect(const EnvConfig& cfg, const std::string& policy, int steps,
                double noise_sigma, std::uint64_t seed, bool ood,
                const std::optional<CountSampler>& count_sampler = std::nullopt);

// draws one action vector for an env according to the policy name
std::vector<double> sample_policy_action(const Env& env, const std::string& policy, Rng& rng);

// flat next-state values (S' layout) extracted from a full (S, A) vector
std::vector<double> extract_next_state(const InstanceLayout& layout,
                                       const std::vector<double>& sa);
// writes S' values into the state slots of an (S, A) vector
void load_next_state(const InstanceLayout& layout, const std::vector<double>& sp,
                     std::vector<double>& sa);

}  // namespace oocdm

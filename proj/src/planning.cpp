#include "oocdm/planning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oocdm {

namespace {

// one entry per action scalar: (categorical?, cardinality)
std::vector<std::pair<bool, int>> action_slots(const InstanceLayout& layout) {
  std::vector<std::pair<bool, int>> out;
  for (const Attribute& a : layout.attributes()) {
    const FieldSpec& f = layout.schema().classes[a.class_idx].fields[a.field_idx];
    if (f.kind != FieldKind::kAction) continue;
    if (f.domain.type == DomainType::kCategorical) {
      for (int card : f.domain.cards) out.emplace_back(true, card);
    } else {
      for (int c = 0; c < f.domain.dim; ++c) out.emplace_back(false, 0);
    }
  }
  return out;
}

void scatter_action_scalars(const InstanceLayout& layout, const std::vector<double>& action,
                            std::vector<double>& sa) {
  int k = 0;
  for (const Attribute& a : layout.attributes()) {
    const FieldSpec& f = layout.schema().classes[a.class_idx].fields[a.field_idx];
    if (f.kind != FieldKind::kAction) continue;
    for (int c = 0; c < f.domain.value_width(); ++c) sa[a.sa_off + c] = action[k++];
  }
}

}  // namespace

void PlanConfig::validate() const {
  if (horizon < 1) throw PlanError("horizon must be at least 1");
  if (n_plan < 1) throw PlanError("n_plan must be at least 1");
  if (k_star <= 0 || k_star >= k) throw PlanError("need 0 < k_star < k");
  if (!(gamma > 0.0) || gamma > 1.0) throw PlanError("gamma outside (0,1]");
}

CemSlot refit_categorical(const std::vector<int>& elite_values, int card) {
  CemSlot slot;
  slot.categorical = true;
  slot.card = card;
  slot.probs.assign(card, 0.0);
  std::vector<int> counts(card, 0);
  for (int v : elite_values) {
    if (v < 0 || v >= card) throw PlanError("elite value outside the category range");
    ++counts[v];
  }
  // elite frequencies with an add-one/cardinality floor so no category
  // collapses to zero across iterations
  const double denom = static_cast<double>(elite_values.size()) + 1.0;
  for (int c = 0; c < card; ++c)
    slot.probs[c] = (counts[c] + 1.0 / card) / denom;
  return slot;
}

CemSlot refit_gaussian(const std::vector<double>& elite_values) {
  CemSlot slot;
  slot.categorical = false;
  double mean = 0.0;
  for (double v : elite_values) mean += v;
  mean /= static_cast<double>(elite_values.size());
  double var = 0.0;
  for (double v : elite_values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(elite_values.size());
  slot.mean = mean;
  slot.stddev = std::max(std::sqrt(var), 1e-8);
  return slot;
}

std::vector<int> top_indices(const std::vector<double>& returns, int k_star) {
  std::vector<int> idx(returns.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k_star, idx.end(), [&](int a, int b) {
    if (returns[a] != returns[b]) return returns[a] > returns[b];
    return a < b;
  });
  idx.resize(k_star);
  return idx;
}

std::vector<std::vector<double>> LearnedRollout::next_states(
    const std::vector<std::vector<double>>& sa_rows, Rng& rng) {
  Batch b = make_state_batch(model_.schema(), counts_, sa_rows);
  return model_.sample_next(b, graph_, rng, !sample_);
}

std::vector<std::vector<double>> MlpRollout::next_states(
    const std::vector<std::vector<double>>& sa_rows, Rng& rng) {
  Batch b = make_state_batch(model_.layout().schema(), model_.layout().counts(), sa_rows);
  return model_.sample_next(b, rng, !sample_);
}

std::vector<std::vector<double>> SimulatorRollout::next_states(
    const std::vector<std::vector<double>>& sa_rows, Rng& rng) {
  RngNoise noise(rng);
  std::vector<std::vector<double>> out;
  out.reserve(sa_rows.size());
  for (const std::vector<double>& row : sa_rows) {
    EnvState st;
    st.sa = row;
    StepResult sr = env_.step(st, env_.gather_actions(row), noise);
    out.push_back(extract_next_state(env_.layout(), sr.next.sa));
  }
  return out;
}

RewardFn make_reward_fn(const Env& env) {
  return [&env](const std::vector<double>& sa, const std::vector<double>& next_sa) {
    EnvState a, b;
    a.sa = sa;
    b.sa = next_sa;
    return env.reward_between(a, b);
  };
}

std::vector<double> cem_plan(RolloutModel& model, const RewardFn& reward,
                             const InstanceLayout& layout, const std::vector<double>& state_sa,
                             const PlanConfig& cfg, Rng& rng,
                             const ActionOverride* override_sampler) {
  cfg.validate();
  const auto slots = action_slots(layout);
  const int n_slots = static_cast<int>(slots.size());

  CemDistribution theta;
  theta.slots.assign(cfg.horizon, {});
  for (int t = 0; t < cfg.horizon; ++t)
    for (const auto& [categorical, card] : slots) {
      CemSlot s;
      s.categorical = categorical;
      s.card = card;
      if (categorical) s.probs.assign(card, 1.0 / card);
      theta.slots[t].push_back(std::move(s));
    }

  auto sample_slot = [&rng](const CemSlot& s) -> double {
    if (s.categorical) {
      const double u = rng.uniform();
      double acc = 0.0;
      for (int c = 0; c < s.card; ++c) {
        acc += s.probs[c];
        if (u < acc) return c;
      }
      return s.card - 1;
    }
    return rng.normal(s.mean, s.stddev);
  };

  for (int iter = 0; iter < cfg.n_plan; ++iter) {
    // actions[j][t][slot]
    std::vector<std::vector<std::vector<double>>> actions(
        cfg.k, std::vector<std::vector<double>>(cfg.horizon, std::vector<double>(n_slots)));
    for (int j = 0; j < cfg.k; ++j)
      for (int t = 0; t < cfg.horizon; ++t)
        for (int s = 0; s < n_slots; ++s)
          actions[j][t][s] = override_sampler ? (*override_sampler)(iter, j, t, s)
                                              : sample_slot(theta.slots[t][s]);

    std::vector<std::vector<double>> rows(cfg.k, state_sa);
    std::vector<double> returns(cfg.k, 0.0);
    double discount = 1.0;
    for (int t = 0; t < cfg.horizon; ++t) {
      for (int j = 0; j < cfg.k; ++j) scatter_action_scalars(layout, actions[j][t], rows[j]);
      std::vector<std::vector<double>> next_sp = model.next_states(rows, rng);
      for (int j = 0; j < cfg.k; ++j) {
        std::vector<double> next_sa(rows[j].size(), 0.0);
        load_next_state(layout, next_sp[j], next_sa);
        returns[j] += discount * reward(rows[j], next_sa);
        rows[j] = std::move(next_sa);
      }
      discount *= cfg.gamma;
    }

    if (iter + 1 < cfg.n_plan) {
      const std::vector<int> elites = top_indices(returns, cfg.k_star);
      for (int t = 0; t < cfg.horizon; ++t)
        for (int s = 0; s < n_slots; ++s) {
          if (slots[s].first) {
            std::vector<int> vals;
            vals.reserve(elites.size());
            for (int e : elites) vals.push_back(static_cast<int>(actions[e][t][s]));
            theta.slots[t][s] = refit_categorical(vals, slots[s].second);
          } else {
            std::vector<double> vals;
            vals.reserve(elites.size());
            for (int e : elites) vals.push_back(actions[e][t][s]);
            theta.slots[t][s] = refit_gaussian(vals);
          }
        }
    } else {
      int best = 0;
      for (int j = 1; j < cfg.k; ++j)
        if (returns[j] > returns[best]) best = j;
      return actions[best][0];
    }
  }
  throw PlanError("unreachable");
}

double mpc_episode(const Env& env, RolloutModel& model, const PlanConfig& cfg, Rng& rng,
                   bool ood) {
  EnvState state = env.reset(rng, ood);
  RngNoise noise(rng);
  double total = 0.0;
  while (!state.terminal) {
    const std::vector<double> action =
        cem_plan(model, make_reward_fn(env), env.layout(), state.sa, cfg, rng);
    StepResult sr = env.step(state, action, noise);
    total += sr.reward;
    state = std::move(sr.next);
  }
  return total;
}

}  // namespace oocdm

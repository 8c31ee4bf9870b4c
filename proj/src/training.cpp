#include "oocdm/training.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include "nlohmann/json.hpp"

namespace oocdm {

namespace {

// One weighted log-likelihood term: a graph and its weight in the objective.
struct Term {
  const Oocg* graph;
  double weight;
};

std::vector<long long> class_instance_steps(const OomdpSchema& schema,
                                            const RecordRefs& records) {
  std::vector<long long> steps(schema.classes.size(), 0);
  for (const TransitionRecord* r : records)
    for (std::size_t k = 0; k < steps.size(); ++k) steps[k] += r->counts[k];
  return steps;
}

// Evaluates sum_terms w_term * L_graph(records) where L is the Eq.-8 AILL.
// The record set is split into fixed-size contiguous parts evaluated on
// independent tapes; the partition and the combination order depend only on
// the record set, never on the worker count, so any thread count produces
// bit-identical values and gradients.
constexpr std::size_t kPartRows = 128;

double weighted_objective(const OocdmModel& model, const RecordRefs& records,
                          const std::vector<Term>& terms, int threads, GradMap* grads) {
  if (records.empty()) throw TrainError("empty record set");
  const OomdpSchema& schema = model.schema();
  const std::vector<long long> steps = class_instance_steps(schema, records);

  const std::size_t n_parts = (records.size() + kPartRows - 1) / kPartRows;
  std::vector<double> part_value(n_parts, 0.0);
  std::vector<GradMap> part_grads(grads ? n_parts : 0);
  std::vector<std::uint8_t> part_nonempty(n_parts, 0);

  auto run_part = [&](std::size_t p) {
    const std::size_t lo = p * kPartRows;
    const std::size_t hi = std::min(records.size(), lo + kPartRows);
    RecordRefs part(records.begin() + lo, records.begin() + hi);
    Tape tape(true);
    Var root = -1;
    for (auto& group : group_by_counts(part)) {
      Batch batch = make_batch(schema, group);
      OocdmModel::Ctx ctx = model.make_ctx(tape, batch);
      for (const Term& term : terms) {
        if (term.weight == 0.0) continue;
        std::vector<Var> sums = model.class_log_prob_sums(ctx, *term.graph);
        for (std::size_t k = 0; k < sums.size(); ++k) {
          if (sums[k] < 0 || steps[k] == 0) continue;
          const Var scaled =
              tape.scale(sums[k], term.weight / static_cast<double>(steps[k]));
          root = root < 0 ? scaled : tape.add(root, scaled);
        }
      }
    }
    if (root < 0) return;
    part_nonempty[p] = 1;
    part_value[p] = tape.value(root).data[0];
    if (grads) part_grads[p] = tape.backward(root, model.params());
  };

  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n_parts)));
  if (workers == 1) {
    for (std::size_t p = 0; p < n_parts; ++p) run_part(p);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&]() {
        while (true) {
          const std::size_t p = next.fetch_add(1);
          if (p >= n_parts) return;
          run_part(p);
        }
      });
    for (auto& th : pool) th.join();
  }

  bool any = false;
  double value = 0.0;
  for (std::size_t p = 0; p < n_parts; ++p) {
    if (!part_nonempty[p]) continue;
    any = true;
    value += part_value[p];
  }
  if (!any) throw TrainError("no class with instances in the record set");
  if (grads) {
    bool first = true;
    for (std::size_t p = 0; p < n_parts; ++p) {
      if (!part_nonempty[p]) continue;
      if (first) {
        *grads = std::move(part_grads[p]);
        first = false;
        continue;
      }
      for (std::size_t s = 0; s < grads->size(); ++s)
        for (std::size_t i = 0; i < (*grads)[s].data.size(); ++i)
          (*grads)[s].data[i] += part_grads[p][s].data[i];
    }
  }
  return value;
}

double mlp_objective(const MlpBaseline& model, const RecordRefs& records, GradMap* grads) {
  if (records.empty()) throw TrainError("empty record set");
  const OomdpSchema& schema = model.layout().schema();
  const std::vector<long long> steps = class_instance_steps(schema, records);
  Tape tape(true);
  Var root = -1;
  for (auto& group : group_by_counts(records)) {
    Batch batch = make_batch(schema, group);
    std::vector<Var> sums = model.class_log_prob_sums(tape, batch);
    for (std::size_t k = 0; k < sums.size(); ++k) {
      if (sums[k] < 0 || steps[k] == 0) continue;
      const Var scaled = tape.scale(sums[k], 1.0 / static_cast<double>(steps[k]));
      root = root < 0 ? scaled : tape.add(root, scaled);
    }
  }
  if (root < 0) throw TrainError("no class with instances in the record set");
  if (grads) *grads = tape.backward(root, model.params());
  return tape.value(root).data[0];
}

RecordRefs sample_batch(const RecordRefs& records, int batch_size, Rng& rng) {
  RecordRefs out;
  out.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i)
    out.push_back(records[rng.uniform_int(records.size())]);
  return out;
}

RecordRefs subsample(const RecordRefs& records, int size, Rng& rng) {
  if (size <= 0 || size >= static_cast<int>(records.size())) return records;
  std::vector<std::size_t> idx(records.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (int i = 0; i < size; ++i)
    std::swap(idx[i], idx[i + rng.uniform_int(idx.size() - i)]);
  RecordRefs out(size);
  for (int i = 0; i < size; ++i) out[i] = records[idx[i]];
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (lambda < 0.0 || lambda > 1.0) throw TrainError("lambda outside [0,1]");
  if (alpha < 0.0 || beta < 0.0) throw TrainError("negative term weights");
  if (n_iter < 1 || n_batch < 1 || batch_size < 1) throw TrainError("non-positive counts");
  if (!(epsilon > 0.0)) throw TrainError("epsilon must be positive");
  if (threads < 1) throw TrainError("threads must be positive");
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.n_iter = j.value("n_iter", cfg.n_iter);
  cfg.n_batch = j.value("n_batch", cfg.n_batch);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.beta = j.value("beta", cfg.beta);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.discovery_subsample = j.value("discovery_subsample", cfg.discovery_subsample);
  cfg.recompute_final_graph = j.value("recompute_final_graph", cfg.recompute_final_graph);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.adam.lr = j.value("lr", cfg.adam.lr);
  cfg.adam.beta1 = j.value("adam_beta1", cfg.adam.beta1);
  cfg.adam.beta2 = j.value("adam_beta2", cfg.adam.beta2);
  cfg.adam.eps = j.value("adam_eps", cfg.adam.eps);
  cfg.validate();
  return cfg;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"n_iter", cfg.n_iter},
          {"n_batch", cfg.n_batch},
          {"batch_size", cfg.batch_size},
          {"lambda", cfg.lambda},
          {"alpha", cfg.alpha},
          {"beta", cfg.beta},
          {"epsilon", cfg.epsilon},
          {"seed", cfg.seed},
          {"discovery_subsample", cfg.discovery_subsample},
          {"threads", cfg.threads},
          {"lr", cfg.adam.lr},
          {"adam_beta1", cfg.adam.beta1},
          {"adam_beta2", cfg.adam.beta2},
          {"adam_eps", cfg.adam.eps}};
}

nlohmann::json history_to_json(const TrainHistory& h) {
  nlohmann::json out = nlohmann::json::array();
  for (const IterationStats& it : h.iterations)
    out.push_back({{"iteration", it.iteration},
                   {"mean_objective", it.mean_objective},
                   {"graph_accuracy", it.graph_accuracy},
                   {"wall_seconds", it.wall_seconds}});
  return out;
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "oocdm") return TrainMode::kOocdm;
  if (s == "oofull") return TrainMode::kOofull;
  if (s == "mlp") return TrainMode::kMlp;
  throw TrainError("unknown train mode: " + s);
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kOocdm: return "oocdm";
    case TrainMode::kOofull: return "oofull";
    case TrainMode::kMlp: return "mlp";
  }
  return "?";
}

double aill(const OocdmModel& model, const RecordRefs& records, const Oocg& graph,
            int threads) {
  std::vector<Term> terms{{&graph, 1.0}};
  return weighted_objective(model, records, terms, threads, nullptr);
}

double aill(const MlpBaseline& model, const RecordRefs& records, int threads) {
  (void)threads;
  return mlp_objective(model, records, nullptr);
}

double target_j(const OocdmModel& model, const RecordRefs& batch, const Oocg& graph_hat,
                const TrainConfig& cfg, Rng& rng, GradMap* grads) {
  cfg.validate();
  const Oocg g_lambda = sample_graph(model.schema(), cfg.lambda, rng);
  const Oocg g1 = full_graph(model.schema());
  std::vector<Term> terms{{&g_lambda, 1.0}, {&g1, cfg.alpha}, {&graph_hat, cfg.beta}};
  return weighted_objective(model, batch, terms, cfg.threads, grads);
}

TrainedModel train(const OomdpSchema& schema, const Dataset& dataset, const ModelDims& dims,
                   TrainMode mode, const TrainConfig& cfg, const BipartiteAdjacency* truth,
                   const InstanceLayout* truth_layout, bool augmented) {
  cfg.validate();
  if (dataset.records.empty()) throw TrainError("empty dataset");
  if (!(dataset.schema == schema)) throw TrainError("dataset schema mismatch");

  TrainedModel out;
  out.mode = mode;
  const RecordRefs records = all_records(dataset);
  Rng batch_rng = Rng::stream(cfg.seed, "batches");
  Rng lambda_rng = Rng::stream(cfg.seed, "lambda");
  Rng disc_rng = Rng::stream(cfg.seed, "discovery");

  const std::vector<FieldNorm> stats = compute_field_stats(schema, records);

  if (mode == TrainMode::kMlp) {
    for (const TransitionRecord& r : dataset.records)
      if (r.counts != dataset.records[0].counts)
        throw TrainError("mlp baseline needs a fixed instance count");
    out.mlp = std::make_shared<MlpBaseline>(InstanceLayout(schema, dataset.records[0].counts),
                                            256, cfg.seed);
    out.mlp->set_normalization(stats);
    AdamState adam(out.mlp->params(), cfg.adam);
    for (int iter = 0; iter < cfg.n_iter; ++iter) {
      const auto t0 = std::chrono::steady_clock::now();
      double obj_sum = 0.0;
      for (int b = 0; b < cfg.n_batch; ++b) {
        RecordRefs batch = sample_batch(records, cfg.batch_size, batch_rng);
        GradMap grads;
        obj_sum += mlp_objective(*out.mlp, batch, &grads);
        adam.ascent_step(out.mlp->params(), grads);
      }
      IterationStats st;
      st.iteration = iter;
      st.mean_objective = obj_sum / cfg.n_batch;
      st.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out.history.iterations.push_back(st);
    }
    out.graph_hat = empty_graph(schema);
    return out;
  }

  const bool oofull = mode == TrainMode::kOofull;
  out.oocdm = std::make_shared<OocdmModel>(schema, dims, augmented, cfg.seed);
  out.oocdm->set_normalization(stats);
  AdamState adam(out.oocdm->params(), cfg.adam);
  const Oocg g1 = full_graph(schema);
  Oocg ghat = g1;

  for (int iter = 0; iter < cfg.n_iter; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    IterationStats st;
    st.iteration = iter;
    if (!oofull) {
      RecordRefs sub = subsample(records, cfg.discovery_subsample, disc_rng);
      auto [g, report] = discover(*out.oocdm, sub, cfg.epsilon, cfg.threads);
      ghat = std::move(g);
      if (truth && truth_layout)
        st.graph_accuracy = graph_accuracy(ground_graph(ghat, *truth_layout), *truth);
    }
    double obj_sum = 0.0;
    for (int b = 0; b < cfg.n_batch; ++b) {
      RecordRefs batch = sample_batch(records, cfg.batch_size, batch_rng);
      GradMap grads;
      if (oofull) {
        std::vector<Term> terms{{&g1, 1.0}};
        obj_sum += weighted_objective(*out.oocdm, batch, terms, cfg.threads, &grads);
      } else {
        obj_sum += target_j(*out.oocdm, batch, ghat, cfg, lambda_rng, &grads);
      }
      adam.ascent_step(out.oocdm->params(), grads);
    }
    st.mean_objective = obj_sum / cfg.n_batch;
    st.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.history.iterations.push_back(st);
  }

  if (oofull) {
    out.graph_hat = g1;
  } else if (cfg.recompute_final_graph) {
    auto [g, report] = discover(*out.oocdm, records, cfg.epsilon, cfg.threads);
    out.graph_hat = std::move(g);
    out.final_report = std::move(report);
  } else {
    out.graph_hat = ghat;
  }
  return out;
}

}  // namespace oocdm

#include "doctest.h"

#include "oocdm/envs.hpp"
#include "oocdm/training.hpp"

#include "nlohmann/json.hpp"

#include <cmath>

using namespace oocdm;

namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.d_e = 4;
  d.d_k = 6;
  d.d_v = 6;
  d.enc_hidden = {8};
  d.dec_hidden = {8};
  return d;
}

// Eq.-8 by hand from single-record log-prob calls
double naive_aill(const OocdmModel& model, const RecordRefs& records, const Oocg& graph) {
  const OomdpSchema& schema = model.schema();
  std::vector<double> sums(schema.classes.size(), 0.0);
  std::vector<long long> steps(schema.classes.size(), 0);
  for (const TransitionRecord* r : records) {
    Batch b = make_batch(schema, {r});
    auto lp = model.model_log_prob(b, graph);
    for (const Attribute& a : b.layout.attributes()) {
      if (a.var_sp < 0) continue;
      sums[a.class_idx] += lp[a.var_sp][0].data[0];
    }
    for (std::size_t k = 0; k < steps.size(); ++k) steps[k] += r->counts[k];
  }
  double total = 0.0;
  for (std::size_t k = 0; k < sums.size(); ++k)
    if (steps[k] > 0) total += sums[k] / static_cast<double>(steps[k]);
  return total;
}

}  // namespace

TEST_CASE("aill arithmetic") {
  auto env = make_env({"block", {{"Block", 2}}});
  OocdmModel m(env->schema(), tiny_dims(), false, 3);
  Dataset ds = collect({"block", {{"Block", 2}}}, "gaussian", 24, 0.0, 5, false);
  RecordRefs recs = all_records(ds);
  Oocg g1 = full_graph(env->schema());

  SUBCASE("matches the naive per-record oracle") {
    CHECK(aill(m, recs, g1) == doctest::Approx(naive_aill(m, recs, g1)).epsilon(1e-10));
  }
  SUBCASE("duplicating every record changes nothing") {
    RecordRefs doubled = recs;
    doubled.insert(doubled.end(), recs.begin(), recs.end());
    CHECK(aill(m, doubled, g1) == doctest::Approx(aill(m, recs, g1)).epsilon(1e-12));
  }
  SUBCASE("two classes decompose additively") {
    const OomdpSchema& schema = env->schema();
    std::vector<double> sums(2, 0.0);
    std::vector<long long> steps(2, 0);
    for (const TransitionRecord* r : recs) {
      Batch b = make_batch(schema, {r});
      auto lp = m.model_log_prob(b, g1);
      for (const Attribute& a : b.layout.attributes()) {
        if (a.var_sp < 0) continue;
        sums[a.class_idx] += lp[a.var_sp][0].data[0];
      }
      steps[0] += r->counts[0];
      steps[1] += r->counts[1];
    }
    CHECK(aill(m, recs, g1) ==
          doctest::Approx(sums[0] / steps[0] + sums[1] / steps[1]).epsilon(1e-10));
  }
  SUBCASE("eq 8 holds under varying instance counts") {
    CountSampler sampler;
    sampler.ranges = {{"Food", {1, 3}}, {"Monster", {1, 2}}, {"Trap", {1, 2}}};
    Dataset mds = collect({"mouse", {}}, "uniform", 40, 0.0, 7, false, sampler);
    auto menv = make_env({"mouse", {{"Food", 2}, {"Monster", 1}, {"Trap", 1}}});
    OocdmModel mm(menv->schema(), tiny_dims(), false, 9);
    RecordRefs mrecs = all_records(mds);
    Oocg mg1 = full_graph(menv->schema());
    CHECK(aill(mm, mrecs, mg1) ==
          doctest::Approx(naive_aill(mm, mrecs, mg1)).epsilon(1e-10));
  }
  SUBCASE("a class absent everywhere contributes zero") {
    EnvConfig cfg{"mouse", {{"Food", 2}, {"Monster", 0}, {"Trap", 1}}};
    Dataset mds = collect(cfg, "uniform", 10, 0.0, 3, false);
    auto menv = make_env(cfg);
    OocdmModel mm(menv->schema(), tiny_dims(), false, 9);
    const double v = aill(mm, all_records(mds), full_graph(menv->schema()));
    CHECK(std::isfinite(v));
  }
  SUBCASE("thread split does not change the value") {
    CHECK(aill(m, recs, g1, 1) == aill(m, recs, g1, 2));
  }
}

TEST_CASE("target_j") {
  auto env = make_env({"block", {{"Block", 2}}});
  OocdmModel m(env->schema(), tiny_dims(), false, 13);
  Dataset ds = collect({"block", {{"Block", 2}}}, "gaussian", 32, 0.0, 15, false);
  RecordRefs recs = all_records(ds);
  Oocg g1 = full_graph(env->schema());
  TrainConfig cfg;
  cfg.threads = 1;

  SUBCASE("degenerate weights reduce to the full-graph likelihood") {
    cfg.alpha = 0.0;
    cfg.beta = 0.0;
    cfg.lambda = 1.0;
    Rng rng(1);
    CHECK(target_j(m, recs, g1, cfg, rng) == aill(m, recs, g1));
  }
  SUBCASE("unit weights sum three likelihood terms") {
    cfg.alpha = 1.0;
    cfg.beta = 1.0;
    cfg.lambda = 0.6;
    Rng grng(21);
    Oocg ghat = sample_graph(env->schema(), 0.5, grng);
    Rng rng(77);
    const double j = target_j(m, recs, ghat, cfg, rng);
    Rng rng2(77);
    Oocg g_lambda = sample_graph(env->schema(), cfg.lambda, rng2);
    const double expected =
        aill(m, recs, g_lambda) + aill(m, recs, g1) + aill(m, recs, ghat);
    CHECK(j == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("fixed seed gives an identical draw and value") {
    Rng a(5), b(5);
    CHECK(target_j(m, recs, g1, cfg, a) == target_j(m, recs, g1, cfg, b));
  }
  SUBCASE("the discovered-graph term responds to the graph argument") {
    cfg.lambda = 1.0;
    Rng a(5), b(5);
    Oocg sparse = empty_graph(env->schema());
    CHECK(target_j(m, recs, g1, cfg, a) != target_j(m, recs, sparse, cfg, b));
  }
}

TEST_CASE("train loop") {
  auto env = make_env({"block", {{"Block", 2}}});
  Dataset ds = collect({"block", {{"Block", 2}}}, "gaussian", 400, 0.0, 31, false);
  TrainConfig cfg;
  cfg.n_iter = 2;
  cfg.n_batch = 25;
  cfg.batch_size = 32;
  cfg.epsilon = 0.3;
  cfg.seed = 3;
  cfg.threads = 2;
  cfg.discovery_subsample = 128;

  SUBCASE("objective increases from the initial parameters") {
    OocdmModel init(env->schema(), tiny_dims(), false, cfg.seed);
    const double before = aill(init, all_records(ds), full_graph(env->schema()));
    TrainedModel tm = train(env->schema(), ds, tiny_dims(), TrainMode::kOocdm, cfg);
    const double after = aill(*tm.oocdm, all_records(ds), full_graph(env->schema()));
    CHECK(after > before);
    CHECK(tm.history.iterations.size() == 2);
  }
  SUBCASE("training is deterministic") {
    TrainedModel a = train(env->schema(), ds, tiny_dims(), TrainMode::kOocdm, cfg);
    TrainedModel b = train(env->schema(), ds, tiny_dims(), TrainMode::kOocdm, cfg);
    CHECK(a.graph_hat == b.graph_hat);
    for (int s = 0; s < a.oocdm->params().size(); ++s)
      CHECK(a.oocdm->params().tensor(s).data == b.oocdm->params().tensor(s).data);
    CHECK(a.history.iterations[1].mean_objective == b.history.iterations[1].mean_objective);
  }
  SUBCASE("oofull trains on the full graph alone") {
    TrainedModel tm = train(env->schema(), ds, tiny_dims(), TrainMode::kOofull, cfg);
    CHECK(tm.graph_hat == full_graph(env->schema()));
    CHECK(tm.final_report.entries.empty());
    for (const IterationStats& it : tm.history.iterations) CHECK(it.graph_accuracy == -1.0);
  }
  SUBCASE("mlp mode trains the dense baseline") {
    TrainConfig quick = cfg;
    quick.n_batch = 15;
    TrainedModel tm = train(env->schema(), ds, tiny_dims(), TrainMode::kMlp, quick);
    REQUIRE(tm.mlp);
    const double after = aill(*tm.mlp, all_records(ds));
    CHECK(std::isfinite(after));
    CHECK(tm.history.iterations.size() == 2);
    CHECK(tm.history.iterations[1].mean_objective > tm.history.iterations[0].mean_objective);
  }
  SUBCASE("mlp mode rejects varying counts") {
    CountSampler sampler;
    sampler.ranges = {{"Food", {1, 3}}, {"Monster", {1, 2}}, {"Trap", {1, 2}}};
    Dataset mds = collect({"mouse", {}}, "uniform", 60, 0.0, 7, false, sampler);
    CHECK_THROWS_AS(train(mds.schema, mds, tiny_dims(), TrainMode::kMlp, cfg), TrainError);
  }
  SUBCASE("history records graph accuracy against supplied truth") {
    auto truth_adj = env->ground_truth_adjacency();
    TrainedModel tm = train(env->schema(), ds, tiny_dims(), TrainMode::kOocdm, cfg,
                            &truth_adj, &env->layout());
    for (const IterationStats& it : tm.history.iterations) {
      CHECK(it.graph_accuracy >= 0.0);
      CHECK(it.graph_accuracy <= 100.0);
    }
  }
  SUBCASE("empty dataset rejected") {
    Dataset empty;
    empty.schema = env->schema();
    CHECK_THROWS_AS(train(env->schema(), empty, tiny_dims(), TrainMode::kOocdm, cfg),
                    TrainError);
  }
}

TEST_CASE("train config json round trip") {
  TrainConfig cfg;
  cfg.n_iter = 7;
  cfg.lambda = 0.75;
  cfg.adam.lr = 2e-3;
  TrainConfig back = train_config_from_json(train_config_to_json(cfg));
  CHECK(back.n_iter == 7);
  CHECK(back.lambda == 0.75);
  CHECK(back.adam.lr == 2e-3);
  nlohmann::json bad = train_config_to_json(cfg);
  bad["lambda"] = 1.5;
  CHECK_THROWS_AS(train_config_from_json(bad), TrainError);
}

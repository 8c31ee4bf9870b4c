#include "oocdm/discovery.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include "nlohmann/json.hpp"

namespace oocdm {

namespace {

constexpr int kChunk = 256;

// can this causality's grounding contribute an edge anywhere in the data?
bool causality_testable(const RecordRefs& records, const Causality& c) {
  for (const TransitionRecord* r : records) {
    if (r->counts[c.dst_class] == 0) continue;
    if (c.is_local) return true;
    if (c.src_class == c.dst_class) {
      if (r->counts[c.dst_class] >= 2) return true;
    } else if (r->counts[c.src_class] >= 1) {
      return true;
    }
  }
  return false;
}

long long instance_steps(const RecordRefs& records, int class_idx) {
  long long n = 0;
  for (const TransitionRecord* r : records) n += r->counts[class_idx];
  return n;
}

// target-field log-likelihood sum over one chunk under one graph
double field_chunk_sum(const OocdmModel& model, OocdmModel::Ctx& ctx, const Oocg& graph,
                       int ci, int fi) {
  Tape& tape = *ctx.tape;
  double total = 0.0;
  for (Var lp : model.build_field_log_prob(ctx, graph, ci, fi))
    total += tape.value(tape.reduce_sum(lp)).data[0];
  return total;
}

struct FieldTarget {
  int ci, fi;
  int order;  // position over (class, state field) pairs
};

std::vector<FieldTarget> field_targets(const OomdpSchema& schema) {
  std::vector<FieldTarget> out;
  int order = 0;
  for (std::size_t ci = 0; ci < schema.classes.size(); ++ci)
    for (int fi : schema.classes[ci].state_field_indices())
      out.push_back({static_cast<int>(ci), fi, order++});
  return out;
}

}  // namespace

RecordRefs all_records(const Dataset& ds) {
  RecordRefs out;
  out.reserve(ds.records.size());
  for (const TransitionRecord& r : ds.records) out.push_back(&r);
  return out;
}

double cmi(const OocdmModel& model, const RecordRefs& records, const Causality& causality,
           int threads) {
  (void)threads;
  if (records.empty()) throw DiscoveryError("cmi on an empty dataset");
  const OomdpSchema& schema = model.schema();
  const long long steps = instance_steps(records, causality.dst_class);
  if (steps == 0)
    throw DiscoveryError("target class has no instances in the dataset: " +
                         schema.classes[causality.dst_class].name);
  if (!causality_testable(records, causality)) return 0.0;

  const Oocg g1 = full_graph(schema);
  const Oocg ablated = ablate(schema, g1, causality);
  // per-record log-ratio terms, combined order-insensitively so the estimate
  // does not depend on dataset record order
  std::vector<double> terms;
  terms.reserve(records.size());
  for (auto& group : group_by_counts(records)) {
    if (group[0]->counts[causality.dst_class] == 0) continue;
    for (std::size_t off = 0; off < group.size(); off += kChunk) {
      const std::size_t n = std::min<std::size_t>(kChunk, group.size() - off);
      RecordRefs chunk(group.begin() + off, group.begin() + off + n);
      Batch batch = make_batch(schema, chunk);
      Tape tape;
      OocdmModel::Ctx ctx = model.make_ctx(tape, batch);
      std::vector<Var> lp_full =
          model.build_field_log_prob(ctx, g1, causality.dst_class, causality.dst_field);
      std::vector<Var> lp_abl =
          model.build_field_log_prob(ctx, ablated, causality.dst_class, causality.dst_field);
      for (std::size_t r = 0; r < n; ++r) {
        double t = 0.0;
        for (std::size_t j = 0; j < lp_full.size(); ++j)
          t += tape.value(lp_full[j]).data[r] - tape.value(lp_abl[j]).data[r];
        terms.push_back(t);
      }
    }
  }
  return stable_sum(terms) / static_cast<double>(steps);
}

std::pair<Oocg, CmiReport> discover(const OocdmModel& model, const RecordRefs& records,
                                    double epsilon, int threads) {
  if (!(epsilon > 0.0)) throw DiscoveryError("epsilon must be positive");
  if (records.empty()) throw DiscoveryError("discover on an empty dataset");
  const OomdpSchema& schema = model.schema();
  const Oocg g1 = full_graph(schema);
  const std::vector<FieldTarget> targets = field_targets(schema);

  // candidates per target field, canonical order: own-class locals then all
  // global sources
  struct Candidate {
    Causality causality;
    bool testable;
    double l_ablated = 0.0;
  };
  std::vector<std::vector<Candidate>> cands(targets.size());
  std::vector<double> l_full(targets.size(), 0.0);
  std::vector<long long> g1_evals(targets.size(), 0);
  for (const FieldTarget& t : targets) {
    for (std::size_t u = 0; u < schema.classes[t.ci].fields.size(); ++u)
      cands[t.order].push_back(
          {{true, t.ci, static_cast<int>(u), t.ci, t.fi}, false, 0.0});
    for (std::size_t cl = 0; cl < schema.classes.size(); ++cl)
      for (std::size_t u = 0; u < schema.classes[cl].fields.size(); ++u)
        cands[t.order].push_back(
            {{false, static_cast<int>(cl), static_cast<int>(u), t.ci, t.fi}, false, 0.0});
    for (Candidate& c : cands[t.order])
      c.testable = causality_testable(records, c.causality);
  }

  // per-field sweeps are independent read-only work
  auto run_field = [&](const FieldTarget& t) {
    Oocg scratch = g1;
    for (auto& group : group_by_counts(records)) {
      if (group[0]->counts[t.ci] == 0) continue;
      for (std::size_t off = 0; off < group.size(); off += kChunk) {
        const std::size_t n = std::min<std::size_t>(kChunk, group.size() - off);
        RecordRefs chunk(group.begin() + off, group.begin() + off + n);
        Batch batch = make_batch(schema, chunk);
        Tape tape;
        OocdmModel::Ctx ctx = model.make_ctx(tape, batch);
        l_full[t.order] += field_chunk_sum(model, ctx, g1, t.ci, t.fi);
        g1_evals[t.order] += static_cast<long long>(n);
        for (Candidate& c : cands[t.order]) {
          if (!c.testable) continue;
          scratch.set(schema, c.causality, false);
          c.l_ablated += field_chunk_sum(model, ctx, scratch, t.ci, t.fi);
          scratch.set(schema, c.causality, true);
        }
      }
    }
  };

  if (threads <= 1) {
    for (const FieldTarget& t : targets) run_field(t);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < threads; ++w)
      pool.emplace_back([&]() {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= targets.size()) return;
          run_field(targets[i]);
        }
      });
    for (auto& th : pool) th.join();
  }

  Oocg ghat = empty_graph(schema);
  CmiReport report;
  report.epsilon = epsilon;
  report.g1_record_evals = g1_evals;
  for (const FieldTarget& t : targets) {
    const long long steps = instance_steps(records, t.ci);
    for (const Candidate& c : cands[t.order]) {
      CmiEntry e;
      e.causality = c.causality;
      e.name = causality_name(schema, c.causality);
      e.epsilon = epsilon;
      e.testable = c.testable;
      if (c.testable && steps > 0) {
        e.value = (l_full[t.order] - c.l_ablated) / static_cast<double>(steps);
        e.decision = e.value > epsilon;
      }
      if (e.decision) ghat.set(schema, e.causality, true);
      report.entries.push_back(std::move(e));
    }
  }
  return {std::move(ghat), std::move(report)};
}

nlohmann::json cmi_report_to_json(const CmiReport& report) {
  nlohmann::json entries = nlohmann::json::array();
  for (const CmiEntry& e : report.entries)
    entries.push_back({{"causality", e.name},
                       {"value", e.value},
                       {"epsilon", e.epsilon},
                       {"decision", e.decision},
                       {"testable", e.testable}});
  return {{"epsilon", report.epsilon}, {"entries", entries}};
}

}  // namespace oocdm

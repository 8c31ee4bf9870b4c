#pragma once

#include <string>
#include <vector>

#include "nlohmann/json_fwd.hpp"
#include "oocdm/model.hpp"

namespace oocdm {

struct DiscoveryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CmiEntry {
  Causality causality;
  std::string name;
  double value = 0.0;
  double epsilon = 0.0;
  bool decision = false;
  // a causality whose grounding never adds an edge in this data is untestable
  // and defaults absent
  bool testable = true;
};

struct CmiReport {
  std::vector<CmiEntry> entries;
  double epsilon = 0.0;
  // per target state field (var order over (class, state field)): number of
  // per-record full-graph evaluations spent; Algorithm-style single-sweep
  // behaviour means exactly one per record
  std::vector<long long> g1_record_evals;
};

using RecordRefs = std::vector<const TransitionRecord*>;

RecordRefs all_records(const Dataset& ds);

// Eq. 6/7 estimate for one class-level causality, full graph vs the ablated
// graph under the same parameters.
double cmi(const OocdmModel& model, const RecordRefs& records, const Causality& causality,
           int threads = 1);

// Full class-level scan: per target field, one full-graph sweep plus one
// ablated sweep per candidate causality; keeps those with CMI > epsilon.
std::pair<Oocg, CmiReport> discover(const OocdmModel& model, const RecordRefs& records,
                                    double epsilon, int threads = 1);

nlohmann::json cmi_report_to_json(const CmiReport& report);

}  // namespace oocdm

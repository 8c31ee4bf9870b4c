#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oocdm/schema.hpp"

namespace oocdm {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One (s_t, a_t, s_{t+1}) sample; value vectors follow the canonical layout
// of InstanceLayout(schema, counts).
struct TransitionRecord {
  std::vector<int> counts;  // per class, schema order
  std::vector<double> sa;   // flat (S, A) scalars
  std::vector<double> sp;   // flat S' scalars
  bool operator==(const TransitionRecord&) const = default;
};

struct DatasetMeta {
  std::string env;
  std::uint64_t seed = 0;
  std::string policy;
  bool ood = false;
  double noise_sigma = 0.0;
  bool operator==(const DatasetMeta&) const = default;
};

struct Dataset {
  OomdpSchema schema;
  DatasetMeta meta;
  std::vector<TransitionRecord> records;
  bool operator==(const Dataset&) const = default;
};

// Line-delimited JSON: header line (schema + provenance), one record per line.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);
// load + schema check against an expected schema
Dataset load_dataset(const std::string& path, const OomdpSchema& expected);

}  // namespace oocdm

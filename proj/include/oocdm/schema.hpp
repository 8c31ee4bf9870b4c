#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "nlohmann/json_fwd.hpp"
#include "oocdm/rng.hpp"

namespace oocdm {

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class FieldKind : std::uint8_t { kState, kAction };
enum class DomainType : std::uint8_t { kContinuous, kCategorical };

struct Domain {
  DomainType type = DomainType::kContinuous;
  int dim = 1;             // continuous component count
  std::vector<int> cards;  // categorical cardinalities per component
  std::vector<double> lo, hi;  // optional bounds, continuous only

  static Domain continuous(int dim = 1);
  static Domain continuous_bounded(std::vector<double> lo, std::vector<double> hi);
  static Domain categorical(std::vector<int> cards);

  // scalars stored per value (components for categorical)
  int value_width() const {
    return type == DomainType::kContinuous ? dim : static_cast<int>(cards.size());
  }
  // width after one-hot expansion, as fed to attribute encoders
  int enc_width() const;
  bool operator==(const Domain&) const = default;
};

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::kState;
  Domain domain;
  bool operator==(const FieldSpec&) const = default;
};

struct ClassSchema {
  std::string name;
  std::vector<FieldSpec> fields;

  int field_index(const std::string& fname) const;
  std::vector<int> state_field_indices() const;
  int state_field_count() const;
  bool operator==(const ClassSchema&) const = default;
};

struct OomdpSchema {
  std::vector<ClassSchema> classes;

  void validate() const;
  int class_index(const std::string& name) const;
  int total_fields() const;        // m
  int total_state_fields() const;  // columns of the global flag matrix
  // row of (class ci, field fi) in the global flag matrix
  int global_row(int ci, int fi) const;
  // column of (class ci, state field fi) in the global flag matrix
  int global_col(int ci, int fi) const;
  bool operator==(const OomdpSchema&) const = default;
};

// One grounded attribute (object, field) with its flat indices.
struct Attribute {
  int class_idx = 0;
  int instance_idx = 0;
  int field_idx = 0;
  int var_sa = -1;  // variable index over (S, A)
  int var_sp = -1;  // variable index over S' (-1 for action fields)
  int sa_off = -1;  // scalar offset into the flat (S, A) value vector
  int sp_off = -1;  // scalar offset into the flat S' value vector
};

class InstanceLayout {
 public:
  InstanceLayout() = default;
  InstanceLayout(OomdpSchema schema, std::vector<int> counts);

  const OomdpSchema& schema() const { return schema_; }
  const std::vector<int>& counts() const { return counts_; }
  int n() const { return static_cast<int>(attrs_.size()); }
  int n_state() const { return n_state_; }
  int sa_scalar_width() const { return sa_scalar_width_; }
  int sp_scalar_width() const { return sp_scalar_width_; }
  const std::vector<Attribute>& attributes() const { return attrs_; }
  const Attribute& attribute(int ci, int ii, int fi) const;
  const Attribute& by_var_sa(int v) const { return attrs_[v]; }
  const Attribute& by_var_sp(int v) const { return attrs_[sp_to_attr_[v]]; }

 private:
  OomdpSchema schema_;
  std::vector<int> counts_;
  std::vector<Attribute> attrs_;
  std::vector<int> sp_to_attr_;
  std::vector<int> attr_start_;  // per class, index of first attribute
  int n_state_ = 0;
  int sa_scalar_width_ = 0;
  int sp_scalar_width_ = 0;
};

InstanceLayout ground(const OomdpSchema& schema,
                      const std::unordered_map<std::string, int>& counts);

// Class-level causality expression.
struct Causality {
  bool is_local = true;
  int src_class = 0;
  int src_field = 0;
  int dst_class = 0;  // == src_class for local
  int dst_field = 0;  // state field index within dst_class
  bool operator==(const Causality&) const = default;
};

std::string causality_name(const OomdpSchema& schema, const Causality& c);

// Object-oriented causal graph: boolean class-level causality flags whose
// shape depends only on the schema.
struct Oocg {
  // local[k] is row-major |F[C_k]| x |F_s[C_k]|, columns in state-field order
  std::vector<std::vector<std::uint8_t>> local;
  // row-major m x total_state_fields
  std::vector<std::uint8_t> global;
  int global_cols = 0;

  bool get(const OomdpSchema& schema, const Causality& c) const;
  void set(const OomdpSchema& schema, const Causality& c, bool v);
  std::size_t flag_count() const;  // number of set flags
  bool operator==(const Oocg&) const = default;
};

Oocg empty_graph(const OomdpSchema& schema);
Oocg full_graph(const OomdpSchema& schema);
Oocg ablate(const OomdpSchema& schema, const Oocg& graph, const Causality& c);
Oocg sample_graph(const OomdpSchema& schema, double lambda, Rng& rng);
// every class-level causality expressible in the schema, in canonical order
std::vector<Causality> all_causalities(const OomdpSchema& schema);

struct BipartiteAdjacency {
  int n_in = 0, n_out = 0;
  std::vector<std::uint8_t> cells;  // row-major n_in x n_out

  static BipartiteAdjacency zeros(int n_in, int n_out);
  std::uint8_t at(int i, int j) const { return cells[static_cast<std::size_t>(i) * n_out + j]; }
  void set(int i, int j, bool v) { cells[static_cast<std::size_t>(i) * n_out + j] = v; }
  std::size_t edge_count() const;
  bool operator==(const BipartiteAdjacency&) const = default;
};

BipartiteAdjacency ground_graph(const Oocg& graph, const InstanceLayout& layout);
double graph_accuracy(const BipartiteAdjacency& predicted, const BipartiteAdjacency& truth);

// JSON forms (documented in the README)
nlohmann::json schema_to_json(const OomdpSchema& schema);
OomdpSchema schema_from_json(const nlohmann::json& j);
nlohmann::json graph_to_json(const OomdpSchema& schema, const Oocg& graph);
Oocg graph_from_json(const OomdpSchema& schema, const nlohmann::json& j);
std::uint64_t schema_hash(const OomdpSchema& schema);

}  // namespace oocdm

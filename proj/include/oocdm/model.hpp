#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "nlohmann/json_fwd.hpp"
#include "oocdm/dataset.hpp"
#include "oocdm/rng.hpp"
#include "oocdm/schema.hpp"
#include "oocdm/tensor.hpp"

namespace oocdm {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelDims {
  int d_e = 16;
  int d_k = 32;
  int d_v = 32;
  int d_h = 64;  // augmented hidden encoding width
  std::vector<int> enc_hidden{64, 64};
  std::vector<int> dec_hidden{64, 64};
  bool operator==(const ModelDims&) const = default;
};

// A batch of same-count records turned into model inputs: one-hot expanded
// attribute matrices plus observed next-state targets.
struct Batch {
  InstanceLayout layout;
  int size = 0;  // B
  std::vector<Tensor> attr_inputs;  // per attribute, [B, enc_width]
  // targets per state attribute (var_sp order)
  std::vector<Tensor> next_cont;              // [B, dim] or empty tensor
  std::vector<std::vector<Tensor>> next_idx;  // per categorical component, [B, 1]
  bool has_targets = false;
};

// Per-field affine standardization, one mean/std per scalar component;
// identity for categorical fields.
struct FieldNorm {
  std::vector<double> mean, stddev;
};

// dataset statistics per field (global_row order) for input/target scaling
std::vector<FieldNorm> compute_field_stats(const OomdpSchema& schema,
                                           const std::vector<const TransitionRecord*>& records);

Batch make_batch(const OomdpSchema& schema,
                 const std::vector<const TransitionRecord*>& records);
// current-state-only batch (planning rollouts)
Batch make_state_batch(const OomdpSchema& schema, const std::vector<int>& counts,
                       const std::vector<std::vector<double>>& sa_rows);
// group by count signature, first-appearance order, record order preserved
std::vector<std::vector<const TransitionRecord*>> group_by_counts(
    const std::vector<const TransitionRecord*>& records);

// Predicted distribution of one target field, per target instance.
struct InstanceDist {
  bool continuous = true;
  Tensor mu, sigma;            // [B, dim]
  std::vector<Tensor> logits;  // per component, [B, card]
};

struct PredDistribution {
  std::vector<InstanceDist> instances;
};

// Shared field predictors with attribute encoders, graph masking, key-value
// attention and distribution decoders; optionally augmented with per-position
// recurrent hidden encodings.
class OocdmModel {
 public:
  OocdmModel(OomdpSchema schema, ModelDims dims, bool augmented, std::uint64_t seed);

  const OomdpSchema& schema() const { return schema_; }
  const ModelDims& dims() const { return dims_; }
  bool augmented() const { return augmented_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  // continuous inputs are standardized before encoding and continuous heads
  // decode in standardized space; identity by default
  void set_normalization(std::vector<FieldNorm> norms);
  const std::vector<FieldNorm>& normalization() const { return norms_; }

  // Per-tape forward state: attribute encodings computed once, shared by all
  // field/graph evaluations on that tape.
  struct Ctx {
    Tape* tape = nullptr;
    const Batch* batch = nullptr;
    std::vector<Var> attr_enc;  // per attribute [B, d_e]
    Var zero_enc = -1;
    std::vector<std::pair<int, int>> objects;  // (class, instance) per object
    std::vector<Var> hidden;  // per object [B, d_h]; empty unless augmented
  };
  Ctx make_ctx(Tape& tape, const Batch& batch) const;

  struct FieldDist {
    std::vector<std::array<Var, 2>> cont;       // (mu, sigma) per instance
    std::vector<std::vector<Var>> cat_logits;   // per instance, per component
    bool continuous = true;
  };
  // distribution of C.V' for every instance of class ci under the graph mask
  FieldDist build_field(Ctx& ctx, const Oocg& graph, int ci, int fi) const;
  // log p of the observed next values; one [B,1] var per instance
  std::vector<Var> build_field_log_prob(Ctx& ctx, const Oocg& graph, int ci, int fi) const;
  // summed log-prob per class over fields, instances and rows ([1,1] vars;
  // -1 for classes with no instances in the batch)
  std::vector<Var> class_log_prob_sums(Ctx& ctx, const Oocg& graph) const;

  // convenience wrappers on a scratch tape
  PredDistribution predict_field(const Batch& batch, const Oocg& graph, int ci, int fi) const;
  // per state field (var_sp order), per instance: [B,1] log-prob tensors
  std::vector<std::vector<Tensor>> model_log_prob(const Batch& batch, const Oocg& graph) const;

  // per class, per position: [1, d_h] recurrent hidden encodings
  std::vector<std::vector<Tensor>> augmented_hidden(const std::vector<int>& counts) const;

  // draw next-state values; row-major [B x sp_scalar_width]
  std::vector<std::vector<double>> sample_next(const Batch& batch, const Oocg& graph,
                                               Rng& rng, bool mean_mode) const;

  nlohmann::json manifest() const;

 private:
  struct Mlp {
    std::vector<int> w, b;  // parameter slots per layer
  };
  Mlp add_mlp(const std::string& name, int in, const std::vector<int>& hidden, int out,
              Rng& rng);
  Var run_mlp(Tape& tape, const Mlp& mlp, Var x) const;
  Var run_mlp_head(Tape& tape, const Mlp& trunk, int head_w, int head_b, Var x) const;

  struct GruCell {
    int uz, ur, uh, bz, br, bh;
  };
  GruCell add_gru_cell(const std::string& name, int d, Rng& rng);
  Var gru_step(Tape& tape, const GruCell& cell, Var h) const;

  struct FieldPredictor {
    Mlp q_enc;
    std::vector<Mlp> k_enc, v_enc;  // per source class
    Mlp dec_trunk;
    int head_mu_w = -1, head_mu_b = -1, head_s_w = -1, head_s_b = -1;
    std::vector<std::pair<int, int>> head_cat;  // per component (w, b)
  };

  OomdpSchema schema_;
  ModelDims dims_;
  bool augmented_;
  ParamStore params_;
  std::vector<Mlp> attr_enc_;  // per (class, field) in global_row order
  std::vector<std::vector<FieldPredictor>> predictors_;  // [class][state field pos]
  std::vector<GruCell> gru_fwd_, gru_bwd_;
  std::vector<int> gru_h_init_;
  std::vector<FieldNorm> norms_;  // per (class, field) in global_row order
};

// Dense baseline: every next-state attribute predicted from the full input
// vector by one shared trunk; built for one fixed layout.
class MlpBaseline {
 public:
  MlpBaseline(InstanceLayout layout, int hidden_width, std::uint64_t seed);

  const InstanceLayout& layout() const { return layout_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  void set_normalization(std::vector<FieldNorm> norms);
  const std::vector<FieldNorm>& normalization() const { return norms_; }

  // summed log-prob per class; rejects batches whose layout differs
  std::vector<Var> class_log_prob_sums(Tape& tape, const Batch& batch) const;
  std::vector<std::vector<Tensor>> model_log_prob(const Batch& batch) const;
  std::vector<std::vector<double>> sample_next(const Batch& batch, Rng& rng,
                                               bool mean_mode) const;

 private:
  struct Head {
    int mu_w = -1, mu_b = -1, s_w = -1, s_b = -1;
    std::vector<std::pair<int, int>> cat;
  };
  std::vector<Var> build_dists(Tape& tape, const Batch& batch,
                               std::vector<InstanceDist>* dists_out,
                               std::vector<std::vector<Var>>* lp_out) const;

  InstanceLayout layout_;
  int hidden_width_;
  ParamStore params_;
  std::vector<int> trunk_w_, trunk_b_;
  std::vector<Head> heads_;  // per state attribute (var_sp order)
  std::vector<FieldNorm> norms_;
};

// parameter blob helpers (little-endian f64, manifest order)
std::vector<std::uint8_t> params_to_blob(const ParamStore& store);
void params_from_blob(ParamStore& store, const std::vector<std::uint8_t>& blob);

}  // namespace oocdm

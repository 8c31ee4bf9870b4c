#include "oocdm/model.hpp"

#include <cmath>
#include <cstring>

#include "nlohmann/json.hpp"

namespace oocdm {

namespace {

Tensor uniform_fan_in(Rng& rng, int rows, int cols, int fan_in) {
  Tensor t = Tensor::zeros({rows, cols});
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& x : t.data) x = rng.uniform(-s, s);
  return t;
}

Var sigmoid(Tape& t, Var x) {
  return t.shift(t.scale(t.tanh(t.scale(x, 0.5)), 0.5), 0.5);
}

constexpr double kSigmaFloor = 1e-3;

void encode_attr_row(const FieldSpec& f, const double* src, double* dst, int record_row,
                     const char* what) {
  if (f.domain.type == DomainType::kContinuous) {
    for (int c = 0; c < f.domain.dim; ++c) dst[c] = src[c];
    return;
  }
  int off = 0;
  for (std::size_t c = 0; c < f.domain.cards.size(); ++c) {
    const double raw = src[c];
    const int k = static_cast<int>(raw);
    if (raw != static_cast<double>(k) || k < 0 || k >= f.domain.cards[c])
      throw ModelError(std::string(what) + ": categorical value outside domain at row " +
                       std::to_string(record_row));
    dst[off + k] = 1.0;
    off += f.domain.cards[c];
  }
}

}  // namespace

std::vector<FieldNorm> compute_field_stats(
    const OomdpSchema& schema, const std::vector<const TransitionRecord*>& records) {
  std::vector<FieldNorm> out;
  std::vector<std::vector<double>> sums, sqs;
  std::vector<std::vector<long long>> ns;
  for (const ClassSchema& cls : schema.classes)
    for (const FieldSpec& f : cls.fields) {
      const int w = f.domain.type == DomainType::kContinuous ? f.domain.dim : 0;
      sums.emplace_back(w, 0.0);
      sqs.emplace_back(w, 0.0);
      ns.emplace_back(w, 0);
    }
  for (const TransitionRecord* r : records) {
    InstanceLayout layout(schema, r->counts);
    for (const Attribute& a : layout.attributes()) {
      const FieldSpec& f = schema.classes[a.class_idx].fields[a.field_idx];
      if (f.domain.type != DomainType::kContinuous) continue;
      const int row = schema.global_row(a.class_idx, a.field_idx);
      for (int c = 0; c < f.domain.dim; ++c) {
        const double v = r->sa[a.sa_off + c];
        sums[row][c] += v;
        sqs[row][c] += v * v;
        ns[row][c] += 1;
      }
    }
  }
  for (std::size_t row = 0; row < sums.size(); ++row) {
    FieldNorm norm;
    for (std::size_t c = 0; c < sums[row].size(); ++c) {
      const double n = std::max<long long>(1, ns[row][c]);
      const double mean = sums[row][c] / n;
      const double var = std::max(0.0, sqs[row][c] / n - mean * mean);
      norm.mean.push_back(mean);
      norm.stddev.push_back(std::max(std::sqrt(var), 1e-6));
    }
    out.push_back(std::move(norm));
  }
  return out;
}

Batch make_batch(const OomdpSchema& schema,
                 const std::vector<const TransitionRecord*>& records) {
  if (records.empty()) throw ModelError("empty batch");
  const std::vector<int>& counts = records[0]->counts;
  for (const TransitionRecord* r : records)
    if (r->counts != counts) throw ModelError("batch mixes count signatures");

  Batch b;
  b.layout = InstanceLayout(schema, counts);
  b.size = static_cast<int>(records.size());
  b.has_targets = true;

  for (const Attribute& a : b.layout.attributes()) {
    const FieldSpec& f = schema.classes[a.class_idx].fields[a.field_idx];
    Tensor in = Tensor::zeros({b.size, f.domain.enc_width()});
    for (int r = 0; r < b.size; ++r)
      encode_attr_row(f, records[r]->sa.data() + a.sa_off,
                      in.data.data() + static_cast<std::size_t>(r) * f.domain.enc_width(), r,
                      "batch input");
    b.attr_inputs.push_back(std::move(in));

    if (a.var_sp < 0) continue;
    if (f.domain.type == DomainType::kContinuous) {
      Tensor tgt = Tensor::zeros({b.size, f.domain.dim});
      for (int r = 0; r < b.size; ++r)
        for (int c = 0; c < f.domain.dim; ++c) tgt.at(r, c) = records[r]->sp[a.sp_off + c];
      b.next_cont.push_back(std::move(tgt));
      b.next_idx.emplace_back();
    } else {
      std::vector<Tensor> comps;
      for (std::size_t c = 0; c < f.domain.cards.size(); ++c) {
        Tensor idx = Tensor::zeros({b.size, 1});
        for (int r = 0; r < b.size; ++r) idx.at(r, 0) = records[r]->sp[a.sp_off + c];
        comps.push_back(std::move(idx));
      }
      b.next_cont.emplace_back();
      b.next_idx.push_back(std::move(comps));
    }
  }
  return b;
}

Batch make_state_batch(const OomdpSchema& schema, const std::vector<int>& counts,
                       const std::vector<std::vector<double>>& sa_rows) {
  if (sa_rows.empty()) throw ModelError("empty state batch");
  Batch b;
  b.layout = InstanceLayout(schema, counts);
  b.size = static_cast<int>(sa_rows.size());
  b.has_targets = false;
  for (const Attribute& a : b.layout.attributes()) {
    const FieldSpec& f = schema.classes[a.class_idx].fields[a.field_idx];
    Tensor in = Tensor::zeros({b.size, f.domain.enc_width()});
    for (int r = 0; r < b.size; ++r)
      encode_attr_row(f, sa_rows[r].data() + a.sa_off,
                      in.data.data() + static_cast<std::size_t>(r) * f.domain.enc_width(), r,
                      "state batch");
    b.attr_inputs.push_back(std::move(in));
  }
  return b;
}

std::vector<std::vector<const TransitionRecord*>> group_by_counts(
    const std::vector<const TransitionRecord*>& records) {
  std::vector<std::vector<const TransitionRecord*>> groups;
  std::vector<std::vector<int>> signatures;
  for (const TransitionRecord* r : records) {
    std::size_t g = 0;
    for (; g < signatures.size(); ++g)
      if (signatures[g] == r->counts) break;
    if (g == signatures.size()) {
      signatures.push_back(r->counts);
      groups.emplace_back();
    }
    groups[g].push_back(r);
  }
  return groups;
}

OocdmModel::Mlp OocdmModel::add_mlp(const std::string& name, int in,
                                    const std::vector<int>& hidden, int out, Rng& rng) {
  Mlp mlp;
  std::vector<int> widths{in};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(out);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    mlp.w.push_back(params_.add(name + "/w" + std::to_string(l),
                                uniform_fan_in(rng, widths[l], widths[l + 1], widths[l])));
    mlp.b.push_back(params_.add(name + "/b" + std::to_string(l),
                                uniform_fan_in(rng, 1, widths[l + 1], widths[l])));
  }
  return mlp;
}

Var OocdmModel::run_mlp(Tape& tape, const Mlp& mlp, Var x) const {
  Var h = x;
  for (std::size_t l = 0; l < mlp.w.size(); ++l)
    h = tape.affine(h, tape.param(params_, mlp.w[l]), tape.param(params_, mlp.b[l]),
                    l + 1 < mlp.w.size());
  return h;
}

Var OocdmModel::run_mlp_head(Tape& tape, const Mlp& /*trunk*/, int head_w, int head_b,
                             Var x) const {
  return tape.affine(x, tape.param(params_, head_w), tape.param(params_, head_b), false);
}

OocdmModel::GruCell OocdmModel::add_gru_cell(const std::string& name, int d, Rng& rng) {
  GruCell c;
  c.uz = params_.add(name + "/uz", uniform_fan_in(rng, d, d, d));
  c.ur = params_.add(name + "/ur", uniform_fan_in(rng, d, d, d));
  c.uh = params_.add(name + "/uh", uniform_fan_in(rng, d, d, d));
  c.bz = params_.add(name + "/bz", uniform_fan_in(rng, 1, d, d));
  c.br = params_.add(name + "/br", uniform_fan_in(rng, 1, d, d));
  c.bh = params_.add(name + "/bh", uniform_fan_in(rng, 1, d, d));
  return c;
}

Var OocdmModel::gru_step(Tape& tape, const GruCell& cell, Var h) const {
  // zero-input unit: gates depend on the hidden state alone
  Var z = sigmoid(tape, tape.add(tape.matmul(h, tape.param(params_, cell.uz)),
                                 tape.param(params_, cell.bz)));
  Var r = sigmoid(tape, tape.add(tape.matmul(h, tape.param(params_, cell.ur)),
                                 tape.param(params_, cell.br)));
  Var cand = tape.tanh(tape.add(tape.matmul(tape.mul(r, h), tape.param(params_, cell.uh)),
                                tape.param(params_, cell.bh)));
  Var one_minus_z = tape.shift(tape.scale(z, -1.0), 1.0);
  return tape.add(tape.mul(one_minus_z, h), tape.mul(z, cand));
}

OocdmModel::OocdmModel(OomdpSchema schema, ModelDims dims, bool augmented,
                       std::uint64_t seed)
    : schema_(std::move(schema)), dims_(dims), augmented_(augmented) {
  schema_.validate();
  if (dims_.d_e < 1 || dims_.d_k < 1 || dims_.d_v < 1 || dims_.d_h < 1)
    throw ModelError("model dims must be positive");
  Rng rng = Rng::stream(seed, "init");

  const int extra = augmented_ ? dims_.d_h : 0;
  for (const ClassSchema& cls : schema_.classes)
    for (const FieldSpec& f : cls.fields)
      attr_enc_.push_back(add_mlp("attr_enc/" + cls.name + "." + f.name,
                                  f.domain.enc_width(), dims_.enc_hidden, dims_.d_e, rng));

  for (std::size_t ci = 0; ci < schema_.classes.size(); ++ci) {
    const ClassSchema& cls = schema_.classes[ci];
    predictors_.emplace_back();
    for (int fi : cls.state_field_indices()) {
      const FieldSpec& f = cls.fields[fi];
      const std::string tag = cls.name + "." + f.name;
      FieldPredictor p;
      const int self_in = static_cast<int>(cls.fields.size()) * dims_.d_e + extra;
      p.q_enc = add_mlp("q_enc/" + tag, self_in, dims_.enc_hidden, dims_.d_k, rng);
      for (const ClassSchema& src : schema_.classes) {
        const int other_in = static_cast<int>(src.fields.size()) * dims_.d_e + extra;
        p.k_enc.push_back(add_mlp("k_enc/" + src.name + "->" + tag, other_in,
                                  dims_.enc_hidden, dims_.d_k, rng));
        p.v_enc.push_back(add_mlp("v_enc/" + src.name + "->" + tag, other_in,
                                  dims_.enc_hidden, dims_.d_v, rng));
      }
      const int h_in = dims_.d_k + dims_.d_v;
      const int trunk_out = dims_.dec_hidden.empty() ? h_in : dims_.dec_hidden.back();
      std::vector<int> trunk_hidden(
          dims_.dec_hidden.begin(),
          dims_.dec_hidden.empty() ? dims_.dec_hidden.end() : dims_.dec_hidden.end() - 1);
      p.dec_trunk = add_mlp("dec/" + tag + "/trunk", h_in, trunk_hidden, trunk_out, rng);
      if (f.domain.type == DomainType::kContinuous) {
        p.head_mu_w = params_.add("dec/" + tag + "/mu_w",
                                  uniform_fan_in(rng, trunk_out, f.domain.dim, trunk_out));
        p.head_mu_b = params_.add("dec/" + tag + "/mu_b",
                                  uniform_fan_in(rng, 1, f.domain.dim, trunk_out));
        p.head_s_w = params_.add("dec/" + tag + "/s_w",
                                 uniform_fan_in(rng, trunk_out, f.domain.dim, trunk_out));
        p.head_s_b = params_.add("dec/" + tag + "/s_b",
                                 uniform_fan_in(rng, 1, f.domain.dim, trunk_out));
      } else {
        for (std::size_t c = 0; c < f.domain.cards.size(); ++c) {
          const int w =
              params_.add("dec/" + tag + "/cat" + std::to_string(c) + "_w",
                          uniform_fan_in(rng, trunk_out, f.domain.cards[c], trunk_out));
          const int bb = params_.add("dec/" + tag + "/cat" + std::to_string(c) + "_b",
                                     uniform_fan_in(rng, 1, f.domain.cards[c], trunk_out));
          p.head_cat.emplace_back(w, bb);
        }
      }
      predictors_.back().push_back(std::move(p));
    }
  }

  if (augmented_) {
    const int d_g = dims_.d_h / 2;
    if (d_g * 2 != dims_.d_h) throw ModelError("augmented d_h must be even");
    for (const ClassSchema& cls : schema_.classes) {
      gru_fwd_.push_back(add_gru_cell("gru/" + cls.name + "/fwd", d_g, rng));
      gru_bwd_.push_back(add_gru_cell("gru/" + cls.name + "/bwd", d_g, rng));
      Tensor h0 = Tensor::zeros({1, d_g});
      for (double& x : h0.data) x = rng.uniform(-1.0, 1.0);
      gru_h_init_.push_back(params_.add("gru/" + cls.name + "/h_init", std::move(h0)));
    }
  }

  // identity normalization until the trainer installs dataset statistics
  for (const ClassSchema& cls : schema_.classes)
    for (const FieldSpec& f : cls.fields) {
      FieldNorm norm;
      if (f.domain.type == DomainType::kContinuous) {
        norm.mean.assign(f.domain.dim, 0.0);
        norm.stddev.assign(f.domain.dim, 1.0);
      }
      norms_.push_back(std::move(norm));
    }
}

void OocdmModel::set_normalization(std::vector<FieldNorm> norms) {
  if (norms.size() != norms_.size()) throw ModelError("normalization table size mismatch");
  for (std::size_t i = 0; i < norms.size(); ++i) {
    if (norms[i].mean.size() != norms_[i].mean.size())
      throw ModelError("normalization width mismatch");
    for (double s : norms[i].stddev)
      if (!(s > 0.0)) throw ModelError("normalization stddev must be positive");
  }
  norms_ = std::move(norms);
}

OocdmModel::Ctx OocdmModel::make_ctx(Tape& tape, const Batch& batch) const {
  if (!(batch.layout.schema() == schema_)) throw ModelError("batch schema mismatch");
  Ctx ctx;
  ctx.tape = &tape;
  ctx.batch = &batch;
  ctx.zero_enc = tape.constant(Tensor::zeros({batch.size, dims_.d_e}));
  for (const Attribute& a : batch.layout.attributes()) {
    const int row = schema_.global_row(a.class_idx, a.field_idx);
    Var in = tape.constant(batch.attr_inputs[a.var_sa]);
    const FieldNorm& norm = norms_[row];
    if (!norm.mean.empty()) {
      bool identity = true;
      for (std::size_t c = 0; c < norm.mean.size(); ++c)
        if (norm.mean[c] != 0.0 || norm.stddev[c] != 1.0) identity = false;
      if (!identity) {
        Tensor mean_row = Tensor::zeros({1, static_cast<int>(norm.mean.size())});
        Tensor inv_row = Tensor::zeros({1, static_cast<int>(norm.mean.size())});
        for (std::size_t c = 0; c < norm.mean.size(); ++c) {
          mean_row.at(0, c) = norm.mean[c];
          inv_row.at(0, c) = 1.0 / norm.stddev[c];
        }
        in = tape.mul(
            tape.sub(in, tape.broadcast_rows(tape.constant(std::move(mean_row)), batch.size)),
            tape.broadcast_rows(tape.constant(std::move(inv_row)), batch.size));
      }
    }
    ctx.attr_enc.push_back(run_mlp(tape, attr_enc_[row], in));
  }
  const std::vector<int>& counts = batch.layout.counts();
  for (std::size_t ci = 0; ci < schema_.classes.size(); ++ci)
    for (int ii = 0; ii < counts[ci]; ++ii) ctx.objects.emplace_back(static_cast<int>(ci), ii);

  if (augmented_) {
    for (std::size_t ci = 0; ci < schema_.classes.size(); ++ci) {
      const int n = counts[ci];
      if (n == 0) continue;
      std::vector<Var> fwd, bwd(n);
      Var h = tape.param(params_, gru_h_init_[ci]);
      for (int pos = 0; pos < n; ++pos) {
        h = gru_step(tape, gru_fwd_[ci], h);
        fwd.push_back(h);
      }
      Var g = tape.param(params_, gru_h_init_[ci]);
      for (int pos = n - 1; pos >= 0; --pos) {
        g = gru_step(tape, gru_bwd_[ci], g);
        bwd[pos] = g;
      }
      for (int pos = 0; pos < n; ++pos) {
        std::array<Var, 2> parts{fwd[pos], bwd[pos]};
        ctx.hidden.push_back(
            tape.broadcast_rows(tape.concat_cols(std::span<const Var>(parts)), batch.size));
      }
    }
  }
  return ctx;
}

OocdmModel::FieldDist OocdmModel::build_field(Ctx& ctx, const Oocg& graph, int ci,
                                              int fi) const {
  Tape& tape = *ctx.tape;
  const Batch& batch = *ctx.batch;
  const std::vector<int>& counts = batch.layout.counts();
  const ClassSchema& cls = schema_.classes[ci];
  if (cls.fields[fi].kind != FieldKind::kState)
    throw ModelError("predict_field target must be a state field");
  FieldDist out;
  out.continuous = cls.fields[fi].domain.type == DomainType::kContinuous;
  const int n_targets = counts[ci];
  if (n_targets == 0) return out;

  int sf_pos = 0;
  for (int v : cls.state_field_indices()) {
    if (v == fi) break;
    ++sf_pos;
  }
  const FieldPredictor& pred = predictors_[ci][sf_pos];

  // one key/value per object under this target field's global mask
  std::vector<Var> keys(ctx.objects.size()), values(ctx.objects.size());
  for (std::size_t o = 0; o < ctx.objects.size(); ++o) {
    const auto [oc, oi] = ctx.objects[o];
    const ClassSchema& src = schema_.classes[oc];
    std::vector<Var> parts;
    for (std::size_t u = 0; u < src.fields.size(); ++u) {
      const bool keep = graph.get(schema_, {false, oc, static_cast<int>(u), ci, fi});
      parts.push_back(keep ? ctx.attr_enc[batch.layout.attribute(oc, oi, u).var_sa]
                           : ctx.zero_enc);
    }
    if (augmented_) parts.push_back(ctx.hidden[o]);
    const Var x = tape.concat_cols(parts);
    keys[o] = run_mlp(tape, pred.k_enc[oc], x);
    values[o] = run_mlp(tape, pred.v_enc[oc], x);
  }

  int obj_base = 0;
  for (int k = 0; k < ci; ++k) obj_base += counts[k];
  for (int jj = 0; jj < n_targets; ++jj) {
    std::vector<Var> parts;
    for (std::size_t u = 0; u < cls.fields.size(); ++u) {
      const bool keep = graph.get(schema_, {true, ci, static_cast<int>(u), ci, fi});
      parts.push_back(keep ? ctx.attr_enc[batch.layout.attribute(ci, jj, u).var_sa]
                           : ctx.zero_enc);
    }
    const int obj_index = obj_base + jj;
    if (augmented_) parts.push_back(ctx.hidden[obj_index]);
    const Var self_x = tape.concat_cols(parts);
    const Var q = run_mlp(tape, pred.q_enc, self_x);

    std::vector<Var> att_keys, att_values;
    att_keys.reserve(ctx.objects.size());
    for (std::size_t o = 0; o < ctx.objects.size(); ++o) {
      if (static_cast<int>(o) == obj_index) continue;
      att_keys.push_back(keys[o]);
      att_values.push_back(values[o]);
    }
    const Var context = tape.attention(q, att_keys, att_values, dims_.d_v);
    std::array<Var, 2> hcat{q, context};
    Var h = tape.relu(run_mlp(tape, pred.dec_trunk, tape.concat_cols(std::span<const Var>(hcat))));

    if (out.continuous) {
      Var mu = run_mlp_head(tape, pred.dec_trunk, pred.head_mu_w, pred.head_mu_b, h);
      const Var sraw = run_mlp_head(tape, pred.dec_trunk, pred.head_s_w, pred.head_s_b, h);
      Var sigma = tape.shift(tape.softplus(sraw), kSigmaFloor);
      const FieldNorm& norm = norms_[schema_.global_row(ci, fi)];
      bool identity = true;
      for (std::size_t c = 0; c < norm.mean.size(); ++c)
        if (norm.mean[c] != 0.0 || norm.stddev[c] != 1.0) identity = false;
      if (!identity) {
        // heads decode in standardized target space
        const int w = static_cast<int>(norm.mean.size());
        Tensor mean_row = Tensor::zeros({1, w});
        Tensor std_row = Tensor::zeros({1, w});
        for (int c = 0; c < w; ++c) {
          mean_row.at(0, c) = norm.mean[c];
          std_row.at(0, c) = norm.stddev[c];
        }
        const Var stds = tape.broadcast_rows(tape.constant(std::move(std_row)), batch.size);
        mu = tape.add(tape.mul(mu, stds),
                      tape.broadcast_rows(tape.constant(std::move(mean_row)), batch.size));
        sigma = tape.mul(sigma, stds);
      }
      out.cont.push_back({mu, sigma});
    } else {
      std::vector<Var> logits;
      for (const auto& [w, b] : pred.head_cat)
        logits.push_back(run_mlp_head(tape, pred.dec_trunk, w, b, h));
      out.cat_logits.push_back(std::move(logits));
    }
  }
  return out;
}

std::vector<Var> OocdmModel::build_field_log_prob(Ctx& ctx, const Oocg& graph, int ci,
                                                  int fi) const {
  Tape& tape = *ctx.tape;
  const Batch& batch = *ctx.batch;
  if (!batch.has_targets) throw ModelError("batch carries no next-state targets");
  FieldDist dist = build_field(ctx, graph, ci, fi);
  std::vector<Var> lps;
  const int n_targets = batch.layout.counts()[ci];
  for (int jj = 0; jj < n_targets; ++jj) {
    const Attribute& a = batch.layout.attribute(ci, jj, fi);
    if (dist.continuous) {
      const Var x = tape.constant(batch.next_cont[a.var_sp]);
      lps.push_back(
          tape.row_sum(tape.gaussian_log_prob(x, dist.cont[jj][0], dist.cont[jj][1])));
    } else {
      Var lp = -1;
      for (std::size_t c = 0; c < dist.cat_logits[jj].size(); ++c) {
        const Var idx = tape.constant(batch.next_idx[a.var_sp][c]);
        const Var comp = tape.categorical_log_prob(idx, dist.cat_logits[jj][c]);
        lp = (lp < 0) ? comp : tape.add(lp, comp);
      }
      lps.push_back(lp);
    }
  }
  return lps;
}

std::vector<Var> OocdmModel::class_log_prob_sums(Ctx& ctx, const Oocg& graph) const {
  Tape& tape = *ctx.tape;
  std::vector<Var> out(schema_.classes.size(), -1);
  for (std::size_t ci = 0; ci < schema_.classes.size(); ++ci) {
    if (ctx.batch->layout.counts()[ci] == 0) continue;
    Var total = -1;
    for (int fi : schema_.classes[ci].state_field_indices()) {
      for (Var lp : build_field_log_prob(ctx, graph, static_cast<int>(ci), fi)) {
        const Var s = tape.reduce_sum(lp);
        total = (total < 0) ? s : tape.add(total, s);
      }
    }
    out[ci] = total;
  }
  return out;
}

PredDistribution OocdmModel::predict_field(const Batch& batch, const Oocg& graph, int ci,
                                           int fi) const {
  Tape tape;
  Ctx ctx = make_ctx(tape, batch);
  FieldDist dist = build_field(ctx, graph, ci, fi);
  PredDistribution out;
  const int n_targets = batch.layout.counts()[ci];
  for (int jj = 0; jj < n_targets; ++jj) {
    InstanceDist d;
    d.continuous = dist.continuous;
    if (dist.continuous) {
      d.mu = tape.value(dist.cont[jj][0]);
      d.sigma = tape.value(dist.cont[jj][1]);
    } else {
      for (Var lv : dist.cat_logits[jj]) d.logits.push_back(tape.value(lv));
    }
    out.instances.push_back(std::move(d));
  }
  return out;
}

std::vector<std::vector<Tensor>> OocdmModel::model_log_prob(const Batch& batch,
                                                            const Oocg& graph) const {
  Tape tape;
  Ctx ctx = make_ctx(tape, batch);
  std::vector<std::vector<Tensor>> out(batch.layout.n_state());
  for (std::size_t ci = 0; ci < schema_.classes.size(); ++ci) {
    if (batch.layout.counts()[ci] == 0) continue;
    for (int fi : schema_.classes[ci].state_field_indices()) {
      std::vector<Var> lps = build_field_log_prob(ctx, graph, static_cast<int>(ci), fi);
      for (std::size_t jj = 0; jj < lps.size(); ++jj) {
        const Attribute& a =
            batch.layout.attribute(static_cast<int>(ci), static_cast<int>(jj), fi);
        out[a.var_sp].push_back(tape.value(lps[jj]));
      }
    }
  }
  return out;
}

std::vector<std::vector<Tensor>> OocdmModel::augmented_hidden(
    const std::vector<int>& counts) const {
  if (!augmented_) throw ModelError("augmented_hidden on a non-augmented model");
  Tape tape;
  std::vector<std::vector<Tensor>> out;
  for (std::size_t ci = 0; ci < schema_.classes.size(); ++ci) {
    out.emplace_back();
    const int n = counts[ci];
    if (n == 0) continue;
    std::vector<Var> fwd, bwd(n);
    Var h = tape.param(params_, gru_h_init_[ci]);
    for (int pos = 0; pos < n; ++pos) {
      h = gru_step(tape, gru_fwd_[ci], h);
      fwd.push_back(h);
    }
    Var g = tape.param(params_, gru_h_init_[ci]);
    for (int pos = n - 1; pos >= 0; --pos) {
      g = gru_step(tape, gru_bwd_[ci], g);
      bwd[pos] = g;
    }
    for (int pos = 0; pos < n; ++pos) {
      std::array<Var, 2> parts{fwd[pos], bwd[pos]};
      out.back().push_back(tape.value(tape.concat_cols(std::span<const Var>(parts))));
    }
  }
  return out;
}

namespace {

// draw flat next-state scalars from one instance distribution
void sample_field_rows(const InstanceDist& d, const FieldSpec& f, int sp_off, Rng& rng,
                       bool mean_mode, std::vector<std::vector<double>>& out) {
  const int B = static_cast<int>(out.size());
  if (d.continuous) {
    for (int r = 0; r < B; ++r)
      for (int c = 0; c < f.domain.dim; ++c)
        out[r][sp_off + c] =
            mean_mode ? d.mu.at(r, c) : d.mu.at(r, c) + d.sigma.at(r, c) * rng.normal();
  } else {
    for (int r = 0; r < B; ++r) {
      for (std::size_t c = 0; c < f.domain.cards.size(); ++c) {
        const Tensor& logits = d.logits[c];
        const int card = f.domain.cards[c];
        double mx = logits.at(r, 0);
        for (int k = 1; k < card; ++k) mx = std::max(mx, logits.at(r, k));
        if (mean_mode) {
          int arg = 0;
          for (int k = 1; k < card; ++k)
            if (logits.at(r, k) > logits.at(r, arg)) arg = k;
          out[r][sp_off + c] = arg;
        } else {
          double z = 0.0;
          for (int k = 0; k < card; ++k) z += std::exp(logits.at(r, k) - mx);
          const double u = rng.uniform() * z;
          double acc = 0.0;
          int pick = card - 1;
          for (int k = 0; k < card; ++k) {
            acc += std::exp(logits.at(r, k) - mx);
            if (u < acc) {
              pick = k;
              break;
            }
          }
          out[r][sp_off + c] = pick;
        }
      }
    }
  }
}

}  // namespace

std::vector<std::vector<double>> OocdmModel::sample_next(const Batch& batch,
                                                         const Oocg& graph, Rng& rng,
                                                         bool mean_mode) const {
  Tape tape;
  Ctx ctx = make_ctx(tape, batch);
  std::vector<std::vector<double>> out(
      batch.size, std::vector<double>(batch.layout.sp_scalar_width(), 0.0));
  for (std::size_t ci = 0; ci < schema_.classes.size(); ++ci) {
    if (batch.layout.counts()[ci] == 0) continue;
    for (int fi : schema_.classes[ci].state_field_indices()) {
      FieldDist dist = build_field(ctx, graph, static_cast<int>(ci), fi);
      const FieldSpec& f = schema_.classes[ci].fields[fi];
      for (int jj = 0; jj < batch.layout.counts()[ci]; ++jj) {
        const Attribute& a = batch.layout.attribute(static_cast<int>(ci), jj, fi);
        InstanceDist d;
        d.continuous = dist.continuous;
        if (dist.continuous) {
          d.mu = tape.value(dist.cont[jj][0]);
          d.sigma = tape.value(dist.cont[jj][1]);
        } else {
          for (Var lv : dist.cat_logits[jj]) d.logits.push_back(tape.value(lv));
        }
        sample_field_rows(d, f, a.sp_off, rng, mean_mode, out);
      }
    }
  }
  return out;
}

nlohmann::json OocdmModel::manifest() const {
  nlohmann::json jparams = nlohmann::json::array();
  for (int s = 0; s < params_.size(); ++s)
    jparams.push_back({{"name", params_.name(s)}, {"shape", params_.tensor(s).shape}});
  nlohmann::json jnorms = nlohmann::json::array();
  for (const FieldNorm& n : norms_)
    jnorms.push_back({{"mean", n.mean}, {"std", n.stddev}});
  return {{"schema", schema_to_json(schema_)},
          {"schema_hash", schema_hash(schema_)},
          {"dims",
           {{"d_e", dims_.d_e},
            {"d_k", dims_.d_k},
            {"d_v", dims_.d_v},
            {"d_h", dims_.d_h},
            {"enc_hidden", dims_.enc_hidden},
            {"dec_hidden", dims_.dec_hidden}}},
          {"augmented", augmented_},
          {"normalization", jnorms},
          {"params", jparams}};
}

MlpBaseline::MlpBaseline(InstanceLayout layout, int hidden_width, std::uint64_t seed)
    : layout_(std::move(layout)), hidden_width_(hidden_width) {
  Rng rng = Rng::stream(seed, "mlp_init");
  int in_width = 0;
  for (const Attribute& a : layout_.attributes())
    in_width += layout_.schema().classes[a.class_idx].fields[a.field_idx].domain.enc_width();
  int w = in_width;
  for (int l = 0; l < 3; ++l) {
    trunk_w_.push_back(
        params_.add("mlp/w" + std::to_string(l), uniform_fan_in(rng, w, hidden_width_, w)));
    trunk_b_.push_back(
        params_.add("mlp/b" + std::to_string(l), uniform_fan_in(rng, 1, hidden_width_, w)));
    w = hidden_width_;
  }
  heads_.resize(layout_.n_state());
  for (const Attribute& a : layout_.attributes()) {
    if (a.var_sp < 0) continue;
    const FieldSpec& f = layout_.schema().classes[a.class_idx].fields[a.field_idx];
    const std::string tag = "mlp/head" + std::to_string(a.var_sp);
    Head h;
    if (f.domain.type == DomainType::kContinuous) {
      h.mu_w = params_.add(tag + "/mu_w", uniform_fan_in(rng, w, f.domain.dim, w));
      h.mu_b = params_.add(tag + "/mu_b", uniform_fan_in(rng, 1, f.domain.dim, w));
      h.s_w = params_.add(tag + "/s_w", uniform_fan_in(rng, w, f.domain.dim, w));
      h.s_b = params_.add(tag + "/s_b", uniform_fan_in(rng, 1, f.domain.dim, w));
    } else {
      for (std::size_t c = 0; c < f.domain.cards.size(); ++c) {
        h.cat.emplace_back(params_.add(tag + "/cat" + std::to_string(c) + "_w",
                                       uniform_fan_in(rng, w, f.domain.cards[c], w)),
                           params_.add(tag + "/cat" + std::to_string(c) + "_b",
                                       uniform_fan_in(rng, 1, f.domain.cards[c], w)));
      }
    }
    heads_[a.var_sp] = std::move(h);
  }
  for (const ClassSchema& cls : layout_.schema().classes)
    for (const FieldSpec& f : cls.fields) {
      FieldNorm norm;
      if (f.domain.type == DomainType::kContinuous) {
        norm.mean.assign(f.domain.dim, 0.0);
        norm.stddev.assign(f.domain.dim, 1.0);
      }
      norms_.push_back(std::move(norm));
    }
}

void MlpBaseline::set_normalization(std::vector<FieldNorm> norms) {
  if (norms.size() != norms_.size()) throw ModelError("normalization table size mismatch");
  norms_ = std::move(norms);
}

std::vector<Var> MlpBaseline::build_dists(Tape& tape, const Batch& batch,
                                          std::vector<InstanceDist>* dists_out,
                                          std::vector<std::vector<Var>>* lp_out) const {
  if (batch.layout.counts() != layout_.counts() ||
      !(batch.layout.schema() == layout_.schema()))
    throw ModelError("mlp baseline built for a different layout");
  auto norm_rows = [&](const FieldNorm& norm) {
    const int w = static_cast<int>(norm.mean.size());
    Tensor mean_row = Tensor::zeros({1, w});
    Tensor std_row = Tensor::zeros({1, w});
    for (int c = 0; c < w; ++c) {
      mean_row.at(0, c) = norm.mean[c];
      std_row.at(0, c) = norm.stddev[c];
    }
    return std::pair{mean_row, std_row};
  };
  auto is_identity = [](const FieldNorm& n) {
    for (std::size_t c = 0; c < n.mean.size(); ++c)
      if (n.mean[c] != 0.0 || n.stddev[c] != 1.0) return false;
    return true;
  };
  std::vector<Var> inputs;
  for (const Attribute& a : layout_.attributes()) {
    Var in = tape.constant(batch.attr_inputs[a.var_sa]);
    const FieldNorm& norm = norms_[layout_.schema().global_row(a.class_idx, a.field_idx)];
    if (!norm.mean.empty() && !is_identity(norm)) {
      auto [mean_row, std_row] = norm_rows(norm);
      for (double& v : std_row.data) v = 1.0 / v;
      in = tape.mul(tape.sub(in, tape.broadcast_rows(tape.constant(mean_row), batch.size)),
                    tape.broadcast_rows(tape.constant(std_row), batch.size));
    }
    inputs.push_back(in);
  }
  Var h = tape.concat_cols(inputs);
  for (std::size_t l = 0; l < trunk_w_.size(); ++l)
    h = tape.affine(h, tape.param(params_, trunk_w_[l]), tape.param(params_, trunk_b_[l]),
                    true);
  auto head_out = [&](int w, int b) {
    return tape.affine(h, tape.param(params_, w), tape.param(params_, b), false);
  };
  std::vector<Var> lp_per_attr(layout_.n_state(), -1);
  for (const Attribute& a : layout_.attributes()) {
    if (a.var_sp < 0) continue;
    const FieldSpec& f = layout_.schema().classes[a.class_idx].fields[a.field_idx];
    const Head& head = heads_[a.var_sp];
    if (f.domain.type == DomainType::kContinuous) {
      Var mu = head_out(head.mu_w, head.mu_b);
      Var sigma = tape.shift(tape.softplus(head_out(head.s_w, head.s_b)), kSigmaFloor);
      const FieldNorm& norm = norms_[layout_.schema().global_row(a.class_idx, a.field_idx)];
      if (!is_identity(norm)) {
        auto [mean_row, std_row] = norm_rows(norm);
        const Var stds = tape.broadcast_rows(tape.constant(std_row), batch.size);
        mu = tape.add(tape.mul(mu, stds),
                      tape.broadcast_rows(tape.constant(mean_row), batch.size));
        sigma = tape.mul(sigma, stds);
      }
      if (dists_out) {
        InstanceDist d;
        d.continuous = true;
        d.mu = tape.value(mu);
        d.sigma = tape.value(sigma);
        (*dists_out)[a.var_sp] = std::move(d);
      }
      if (lp_out) {
        const Var x = tape.constant(batch.next_cont[a.var_sp]);
        lp_per_attr[a.var_sp] = tape.row_sum(tape.gaussian_log_prob(x, mu, sigma));
      }
    } else {
      InstanceDist d;
      d.continuous = false;
      Var lp = -1;
      for (std::size_t c = 0; c < f.domain.cards.size(); ++c) {
        const Var logits = head_out(head.cat[c].first, head.cat[c].second);
        if (dists_out) d.logits.push_back(tape.value(logits));
        if (lp_out) {
          const Var comp =
              tape.categorical_log_prob(tape.constant(batch.next_idx[a.var_sp][c]), logits);
          lp = (lp < 0) ? comp : tape.add(lp, comp);
        }
      }
      if (dists_out) (*dists_out)[a.var_sp] = std::move(d);
      if (lp_out) lp_per_attr[a.var_sp] = lp;
    }
  }
  if (lp_out) {
    lp_out->assign(layout_.n_state(), {});
    for (int v = 0; v < layout_.n_state(); ++v) (*lp_out)[v] = {lp_per_attr[v]};
  }
  return lp_per_attr;
}

std::vector<Var> MlpBaseline::class_log_prob_sums(Tape& tape, const Batch& batch) const {
  if (!batch.has_targets) throw ModelError("batch carries no next-state targets");
  std::vector<std::vector<Var>> lps;
  build_dists(tape, batch, nullptr, &lps);
  std::vector<Var> out(layout_.schema().classes.size(), -1);
  for (const Attribute& a : layout_.attributes()) {
    if (a.var_sp < 0) continue;
    const Var s = tape.reduce_sum(lps[a.var_sp][0]);
    Var& slot = out[a.class_idx];
    slot = (slot < 0) ? s : tape.add(slot, s);
  }
  return out;
}

std::vector<std::vector<Tensor>> MlpBaseline::model_log_prob(const Batch& batch) const {
  Tape tape;
  std::vector<std::vector<Var>> lps;
  build_dists(tape, batch, nullptr, &lps);
  std::vector<std::vector<Tensor>> out(layout_.n_state());
  for (int v = 0; v < layout_.n_state(); ++v) out[v].push_back(tape.value(lps[v][0]));
  return out;
}

std::vector<std::vector<double>> MlpBaseline::sample_next(const Batch& batch, Rng& rng,
                                                          bool mean_mode) const {
  Tape tape;
  std::vector<InstanceDist> dists(layout_.n_state());
  build_dists(tape, batch, &dists, nullptr);
  std::vector<std::vector<double>> out(
      batch.size, std::vector<double>(layout_.sp_scalar_width(), 0.0));
  for (const Attribute& a : layout_.attributes()) {
    if (a.var_sp < 0) continue;
    const FieldSpec& f = layout_.schema().classes[a.class_idx].fields[a.field_idx];
    sample_field_rows(dists[a.var_sp], f, a.sp_off, rng, mean_mode, out);
  }
  return out;
}

std::vector<std::uint8_t> params_to_blob(const ParamStore& store) {
  std::vector<std::uint8_t> blob;
  blob.reserve(store.scalar_count() * sizeof(double));
  for (int s = 0; s < store.size(); ++s) {
    const Tensor& t = store.tensor(s);
    const std::size_t off = blob.size();
    blob.resize(off + t.data.size() * sizeof(double));
    std::memcpy(blob.data() + off, t.data.data(), t.data.size() * sizeof(double));
  }
  return blob;
}

void params_from_blob(ParamStore& store, const std::vector<std::uint8_t>& blob) {
  if (blob.size() != store.scalar_count() * sizeof(double))
    throw ModelError("parameter blob length mismatch");
  std::size_t off = 0;
  for (int s = 0; s < store.size(); ++s) {
    Tensor& t = store.tensor(s);
    std::memcpy(t.data.data(), blob.data() + off, t.data.size() * sizeof(double));
    off += t.data.size() * sizeof(double);
  }
}

}  // namespace oocdm

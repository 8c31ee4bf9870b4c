#include "oocdm/schema.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "nlohmann/json.hpp"

namespace oocdm {

Domain Domain::continuous(int dim) {
  Domain d;
  d.type = DomainType::kContinuous;
  d.dim = dim;
  return d;
}

Domain Domain::continuous_bounded(std::vector<double> lo, std::vector<double> hi) {
  Domain d;
  d.type = DomainType::kContinuous;
  d.dim = static_cast<int>(lo.size());
  d.lo = std::move(lo);
  d.hi = std::move(hi);
  return d;
}

Domain Domain::categorical(std::vector<int> cards) {
  Domain d;
  d.type = DomainType::kCategorical;
  d.cards = std::move(cards);
  d.dim = 0;
  return d;
}

int Domain::enc_width() const {
  if (type == DomainType::kContinuous) return dim;
  return std::accumulate(cards.begin(), cards.end(), 0);
}

int ClassSchema::field_index(const std::string& fname) const {
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].name == fname) return static_cast<int>(i);
  return -1;
}

std::vector<int> ClassSchema::state_field_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].kind == FieldKind::kState) out.push_back(static_cast<int>(i));
  return out;
}

int ClassSchema::state_field_count() const {
  return static_cast<int>(state_field_indices().size());
}

void OomdpSchema::validate() const {
  std::set<std::string> cnames;
  for (const ClassSchema& c : classes) {
    if (!cnames.insert(c.name).second) throw SchemaError("duplicate class name: " + c.name);
    std::set<std::string> fnames;
    bool any_state = false;
    for (const FieldSpec& f : c.fields) {
      if (!fnames.insert(f.name).second)
        throw SchemaError("duplicate field name: " + c.name + "." + f.name);
      if (f.kind == FieldKind::kState) any_state = true;
      if (f.domain.type == DomainType::kContinuous) {
        if (f.domain.dim < 1) throw SchemaError("continuous domain needs dim >= 1");
      } else {
        if (f.domain.cards.empty()) throw SchemaError("categorical domain needs components");
        for (int card : f.domain.cards)
          if (card < 2) throw SchemaError("categorical cardinality must be >= 2");
      }
    }
    if (!any_state) throw SchemaError("class without state fields: " + c.name);
  }
}

int OomdpSchema::class_index(const std::string& name) const {
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i].name == name) return static_cast<int>(i);
  return -1;
}

int OomdpSchema::total_fields() const {
  int m = 0;
  for (const ClassSchema& c : classes) m += static_cast<int>(c.fields.size());
  return m;
}

int OomdpSchema::total_state_fields() const {
  int m = 0;
  for (const ClassSchema& c : classes) m += c.state_field_count();
  return m;
}

int OomdpSchema::global_row(int ci, int fi) const {
  int row = 0;
  for (int k = 0; k < ci; ++k) row += static_cast<int>(classes[k].fields.size());
  return row + fi;
}

int OomdpSchema::global_col(int ci, int fi) const {
  int col = 0;
  for (int k = 0; k < ci; ++k) col += classes[k].state_field_count();
  const auto sf = classes[ci].state_field_indices();
  for (std::size_t i = 0; i < sf.size(); ++i)
    if (sf[i] == fi) return col + static_cast<int>(i);
  throw SchemaError("field is not a state field");
}

InstanceLayout::InstanceLayout(OomdpSchema schema, std::vector<int> counts)
    : schema_(std::move(schema)), counts_(std::move(counts)) {
  schema_.validate();
  if (counts_.size() != schema_.classes.size())
    throw SchemaError("counts/classes size mismatch");
  int total = 0;
  for (int c : counts_) {
    if (c < 0) throw SchemaError("negative instance count");
    total += c;
  }
  if (total == 0) throw SchemaError("need at least one instance");

  int var_sa = 0, var_sp = 0, sa_off = 0, sp_off = 0;
  for (std::size_t ci = 0; ci < schema_.classes.size(); ++ci) {
    attr_start_.push_back(var_sa);
    const ClassSchema& cls = schema_.classes[ci];
    for (int ii = 0; ii < counts_[ci]; ++ii) {
      for (std::size_t fi = 0; fi < cls.fields.size(); ++fi) {
        const FieldSpec& f = cls.fields[fi];
        Attribute a;
        a.class_idx = static_cast<int>(ci);
        a.instance_idx = ii;
        a.field_idx = static_cast<int>(fi);
        a.var_sa = var_sa++;
        a.sa_off = sa_off;
        sa_off += f.domain.value_width();
        if (f.kind == FieldKind::kState) {
          a.var_sp = var_sp++;
          a.sp_off = sp_off;
          sp_off += f.domain.value_width();
          sp_to_attr_.push_back(a.var_sa);
        }
        attrs_.push_back(a);
      }
    }
  }
  n_state_ = var_sp;
  sa_scalar_width_ = sa_off;
  sp_scalar_width_ = sp_off;
}

const Attribute& InstanceLayout::attribute(int ci, int ii, int fi) const {
  const ClassSchema& cls = schema_.classes[ci];
  const int nf = static_cast<int>(cls.fields.size());
  return attrs_[attr_start_[ci] + ii * nf + fi];
}

InstanceLayout ground(const OomdpSchema& schema,
                      const std::unordered_map<std::string, int>& counts) {
  std::vector<int> vec(schema.classes.size(), 0);
  for (const auto& [name, count] : counts) {
    const int ci = schema.class_index(name);
    if (ci < 0) throw SchemaError("unknown class name: " + name);
    vec[ci] = count;
  }
  return InstanceLayout(schema, std::move(vec));
}

std::string causality_name(const OomdpSchema& schema, const Causality& c) {
  const auto& src = schema.classes[c.src_class];
  const auto& dst = schema.classes[c.dst_class];
  const std::string head = c.is_local ? "local(" : "global(";
  return head + src.name + "." + src.fields[c.src_field].name + "->" + dst.name + "." +
         dst.fields[c.dst_field].name + ")";
}

namespace {

int local_col(const OomdpSchema& schema, int ci, int fi) {
  const auto sf = schema.classes[ci].state_field_indices();
  for (std::size_t i = 0; i < sf.size(); ++i)
    if (sf[i] == fi) return static_cast<int>(i);
  throw SchemaError("field is not a state field");
}

void check_causality(const OomdpSchema& schema, const Causality& c) {
  if (c.src_class < 0 || c.src_class >= static_cast<int>(schema.classes.size()) ||
      c.dst_class < 0 || c.dst_class >= static_cast<int>(schema.classes.size()))
    throw SchemaError("causality names unknown class");
  if (c.is_local && c.src_class != c.dst_class)
    throw SchemaError("local causality must stay within one class");
  const auto& src = schema.classes[c.src_class];
  const auto& dst = schema.classes[c.dst_class];
  if (c.src_field < 0 || c.src_field >= static_cast<int>(src.fields.size()))
    throw SchemaError("causality names unknown source field");
  if (c.dst_field < 0 || c.dst_field >= static_cast<int>(dst.fields.size()) ||
      dst.fields[c.dst_field].kind != FieldKind::kState)
    throw SchemaError("causality target must be a state field");
}

}  // namespace

bool Oocg::get(const OomdpSchema& schema, const Causality& c) const {
  check_causality(schema, c);
  if (c.is_local) {
    const int cols = schema.classes[c.src_class].state_field_count();
    return local[c.src_class][c.src_field * cols + local_col(schema, c.src_class, c.dst_field)];
  }
  return global[schema.global_row(c.src_class, c.src_field) * global_cols +
                schema.global_col(c.dst_class, c.dst_field)];
}

void Oocg::set(const OomdpSchema& schema, const Causality& c, bool v) {
  check_causality(schema, c);
  if (c.is_local) {
    const int cols = schema.classes[c.src_class].state_field_count();
    local[c.src_class][c.src_field * cols + local_col(schema, c.src_class, c.dst_field)] = v;
  } else {
    global[schema.global_row(c.src_class, c.src_field) * global_cols +
           schema.global_col(c.dst_class, c.dst_field)] = v;
  }
}

std::size_t Oocg::flag_count() const {
  std::size_t n = 0;
  for (const auto& l : local) n += std::count(l.begin(), l.end(), std::uint8_t{1});
  n += std::count(global.begin(), global.end(), std::uint8_t{1});
  return n;
}

Oocg empty_graph(const OomdpSchema& schema) {
  schema.validate();
  Oocg g;
  for (const ClassSchema& c : schema.classes)
    g.local.emplace_back(c.fields.size() * c.state_field_count(), std::uint8_t{0});
  g.global_cols = schema.total_state_fields();
  g.global.assign(static_cast<std::size_t>(schema.total_fields()) * g.global_cols, 0);
  return g;
}

Oocg full_graph(const OomdpSchema& schema) {
  Oocg g = empty_graph(schema);
  for (auto& l : g.local) std::fill(l.begin(), l.end(), std::uint8_t{1});
  std::fill(g.global.begin(), g.global.end(), std::uint8_t{1});
  return g;
}

Oocg ablate(const OomdpSchema& schema, const Oocg& graph, const Causality& c) {
  if (!graph.get(schema, c))
    throw SchemaError("causality already absent: " + causality_name(schema, c));
  Oocg out = graph;
  out.set(schema, c, false);
  return out;
}

Oocg sample_graph(const OomdpSchema& schema, double lambda, Rng& rng) {
  if (lambda < 0.0 || lambda > 1.0) throw SchemaError("lambda outside [0,1]");
  Oocg g = empty_graph(schema);
  for (auto& l : g.local)
    for (auto& flag : l) flag = rng.bernoulli(lambda);
  for (auto& flag : g.global) flag = rng.bernoulli(lambda);
  return g;
}

std::vector<Causality> all_causalities(const OomdpSchema& schema) {
  std::vector<Causality> out;
  for (std::size_t ci = 0; ci < schema.classes.size(); ++ci) {
    const ClassSchema& cls = schema.classes[ci];
    for (std::size_t u = 0; u < cls.fields.size(); ++u)
      for (int v : cls.state_field_indices())
        out.push_back(
            {true, static_cast<int>(ci), static_cast<int>(u), static_cast<int>(ci), v});
  }
  for (std::size_t cl = 0; cl < schema.classes.size(); ++cl)
    for (std::size_t u = 0; u < schema.classes[cl].fields.size(); ++u)
      for (std::size_t ck = 0; ck < schema.classes.size(); ++ck)
        for (int v : schema.classes[ck].state_field_indices())
          out.push_back(
              {false, static_cast<int>(cl), static_cast<int>(u), static_cast<int>(ck), v});
  return out;
}

BipartiteAdjacency BipartiteAdjacency::zeros(int n_in, int n_out) {
  BipartiteAdjacency b;
  b.n_in = n_in;
  b.n_out = n_out;
  b.cells.assign(static_cast<std::size_t>(n_in) * n_out, 0);
  return b;
}

std::size_t BipartiteAdjacency::edge_count() const {
  return std::count(cells.begin(), cells.end(), std::uint8_t{1});
}

BipartiteAdjacency ground_graph(const Oocg& graph, const InstanceLayout& layout) {
  const OomdpSchema& schema = layout.schema();
  if (graph.local.size() != schema.classes.size() ||
      graph.global_cols != schema.total_state_fields())
    throw SchemaError("graph does not match the layout's schema");
  BipartiteAdjacency adj = BipartiteAdjacency::zeros(layout.n(), layout.n_state());
  for (const Attribute& src : layout.attributes()) {
    for (const Attribute& dst : layout.attributes()) {
      if (dst.var_sp < 0) continue;
      const bool same_object =
          src.class_idx == dst.class_idx && src.instance_idx == dst.instance_idx;
      Causality c;
      c.is_local = same_object;
      c.src_class = src.class_idx;
      c.src_field = src.field_idx;
      c.dst_class = dst.class_idx;
      c.dst_field = dst.field_idx;
      if (graph.get(schema, c)) adj.set(src.var_sa, dst.var_sp, true);
    }
  }
  return adj;
}

double graph_accuracy(const BipartiteAdjacency& predicted, const BipartiteAdjacency& truth) {
  if (predicted.n_in != truth.n_in || predicted.n_out != truth.n_out)
    throw SchemaError("graph_accuracy dimension mismatch");
  std::size_t shd = 0;
  for (std::size_t i = 0; i < predicted.cells.size(); ++i)
    if (predicted.cells[i] != truth.cells[i]) ++shd;
  const double total = static_cast<double>(predicted.cells.size());
  return 100.0 * (1.0 - static_cast<double>(shd) / total);
}

nlohmann::json schema_to_json(const OomdpSchema& schema) {
  nlohmann::json jclasses = nlohmann::json::array();
  for (const ClassSchema& c : schema.classes) {
    nlohmann::json jfields = nlohmann::json::array();
    for (const FieldSpec& f : c.fields) {
      nlohmann::json jd;
      if (f.domain.type == DomainType::kContinuous) {
        jd["type"] = "continuous";
        jd["dim"] = f.domain.dim;
        if (!f.domain.lo.empty()) {
          jd["lo"] = f.domain.lo;
          jd["hi"] = f.domain.hi;
        }
      } else {
        jd["type"] = "categorical";
        jd["cards"] = f.domain.cards;
      }
      jfields.push_back({{"name", f.name},
                         {"kind", f.kind == FieldKind::kState ? "state" : "action"},
                         {"domain", jd}});
    }
    jclasses.push_back({{"name", c.name}, {"fields", jfields}});
  }
  return {{"classes", jclasses}};
}

OomdpSchema schema_from_json(const nlohmann::json& j) {
  OomdpSchema schema;
  for (const auto& jc : j.at("classes")) {
    ClassSchema cls;
    cls.name = jc.at("name").get<std::string>();
    for (const auto& jf : jc.at("fields")) {
      FieldSpec f;
      f.name = jf.at("name").get<std::string>();
      const std::string kind = jf.at("kind").get<std::string>();
      if (kind == "state")
        f.kind = FieldKind::kState;
      else if (kind == "action")
        f.kind = FieldKind::kAction;
      else
        throw SchemaError("unknown field kind: " + kind);
      const auto& jd = jf.at("domain");
      const std::string type = jd.at("type").get<std::string>();
      if (type == "continuous") {
        f.domain = Domain::continuous(jd.at("dim").get<int>());
        if (jd.contains("lo")) {
          f.domain.lo = jd.at("lo").get<std::vector<double>>();
          f.domain.hi = jd.at("hi").get<std::vector<double>>();
        }
      } else if (type == "categorical") {
        f.domain = Domain::categorical(jd.at("cards").get<std::vector<int>>());
      } else {
        throw SchemaError("unknown domain type: " + type);
      }
      cls.fields.push_back(std::move(f));
    }
    schema.classes.push_back(std::move(cls));
  }
  schema.validate();
  return schema;
}

nlohmann::json graph_to_json(const OomdpSchema& schema, const Oocg& graph) {
  nlohmann::json jlocal = nlohmann::json::array();
  nlohmann::json jglobal = nlohmann::json::array();
  for (const Causality& c : all_causalities(schema)) {
    if (!graph.get(schema, c)) continue;
    const auto& src = schema.classes[c.src_class];
    const auto& dst = schema.classes[c.dst_class];
    if (c.is_local)
      jlocal.push_back({{"class", src.name},
                        {"from", src.fields[c.src_field].name},
                        {"to", dst.fields[c.dst_field].name}});
    else
      jglobal.push_back({{"from_class", src.name},
                         {"from", src.fields[c.src_field].name},
                         {"to_class", dst.name},
                         {"to", dst.fields[c.dst_field].name}});
  }
  return {{"local", jlocal}, {"global", jglobal}};
}

Oocg graph_from_json(const OomdpSchema& schema, const nlohmann::json& j) {
  Oocg g = empty_graph(schema);
  for (const auto& jc : j.at("local")) {
    const int ci = schema.class_index(jc.at("class").get<std::string>());
    if (ci < 0) throw SchemaError("graph json names unknown class");
    Causality c{true, ci, schema.classes[ci].field_index(jc.at("from").get<std::string>()),
                ci, schema.classes[ci].field_index(jc.at("to").get<std::string>())};
    g.set(schema, c, true);
  }
  for (const auto& jc : j.at("global")) {
    const int cl = schema.class_index(jc.at("from_class").get<std::string>());
    const int ck = schema.class_index(jc.at("to_class").get<std::string>());
    if (cl < 0 || ck < 0) throw SchemaError("graph json names unknown class");
    Causality c{false, cl, schema.classes[cl].field_index(jc.at("from").get<std::string>()),
                ck, schema.classes[ck].field_index(jc.at("to").get<std::string>())};
    g.set(schema, c, true);
  }
  return g;
}

std::uint64_t schema_hash(const OomdpSchema& schema) {
  return hash_str(schema_to_json(schema).dump());
}

}  // namespace oocdm

#include "oocdm/envs.hpp"

#include <algorithm>
#include <cmath>

namespace oocdm {

namespace {

OomdpSchema block_schema() {
  OomdpSchema s;
  ClassSchema block;
  block.name = "Block";
  block.fields = {{"S1", FieldKind::kState, Domain::continuous(1)},
                  {"S2", FieldKind::kState, Domain::continuous(1)},
                  {"S3", FieldKind::kState, Domain::continuous(1)},
                  {"A", FieldKind::kAction, Domain::continuous(1)}};
  ClassSchema total;
  total.name = "Total";
  total.fields = {{"S1", FieldKind::kState, Domain::continuous(1)},
                  {"S2", FieldKind::kState, Domain::continuous(1)},
                  {"S3", FieldKind::kState, Domain::continuous(1)},
                  {"T", FieldKind::kState, Domain::continuous(1)}};
  s.classes = {block, total};
  return s;
}

OomdpSchema mouse_schema() {
  OomdpSchema s;
  ClassSchema mouse;
  mouse.name = "Mouse";
  mouse.fields = {{"Health", FieldKind::kState, Domain::continuous(1)},
                  {"Hunger", FieldKind::kState, Domain::continuous(1)},
                  {"Position", FieldKind::kState, Domain::categorical({8, 8})},
                  {"Move", FieldKind::kAction, Domain::categorical({5})}};
  ClassSchema food;
  food.name = "Food";
  food.fields = {{"Amount", FieldKind::kState, Domain::continuous(1)},
                 {"Position", FieldKind::kState, Domain::categorical({8, 8})}};
  ClassSchema monster;
  monster.name = "Monster";
  monster.fields = {{"Noise", FieldKind::kState, Domain::continuous(1)},
                    {"Position", FieldKind::kState, Domain::categorical({8, 8})}};
  ClassSchema trap;
  trap.name = "Trap";
  trap.fields = {{"Duration", FieldKind::kState, Domain::continuous(1)},
                 {"Position", FieldKind::kState, Domain::categorical({8, 8})}};
  s.classes = {mouse, food, monster, trap};
  return s;
}

}  // namespace

std::vector<double> extract_next_state(const InstanceLayout& layout,
                                       const std::vector<double>& sa) {
  std::vector<double> sp(layout.sp_scalar_width(), 0.0);
  for (const Attribute& a : layout.attributes()) {
    if (a.var_sp < 0) continue;
    const int w = layout.schema().classes[a.class_idx].fields[a.field_idx].domain.value_width();
    for (int i = 0; i < w; ++i) sp[a.sp_off + i] = sa[a.sa_off + i];
  }
  return sp;
}

void load_next_state(const InstanceLayout& layout, const std::vector<double>& sp,
                     std::vector<double>& sa) {
  for (const Attribute& a : layout.attributes()) {
    if (a.var_sp < 0) continue;
    const int w = layout.schema().classes[a.class_idx].fields[a.field_idx].domain.value_width();
    for (int i = 0; i < w; ++i) sa[a.sa_off + i] = sp[a.sp_off + i];
  }
}

namespace {

// Block family. Blocks follow a shared linear map of (S1,S2,S3,tanh A); each
// Total tracks the discounted component maxima over a block set plus a step
// counter T.
class BlockEnv : public Env {
 public:
  BlockEnv(int n_blocks, bool asymmetric)
      : Env(asymmetric ? "asymblock" : "block",
            InstanceLayout(block_schema(),
                           {n_blocks, asymmetric ? n_blocks : 1})),
        n_blocks_(n_blocks),
        asymmetric_(asymmetric) {
    if (n_blocks < 1) throw EnvError("block env needs at least one block");
  }

  EnvState reset(Rng& rng, bool ood) const override {
    EnvState st;
    st.sa.assign(layout_.sa_scalar_width(), 0.0);
    for (int i = 0; i < n_blocks_; ++i) {
      const double m1 = ood ? 0.5 : 1.0;
      const double sd23 = ood ? 2.0 : 1.0;
      st.sa[layout_.attribute(0, i, 0).sa_off] = rng.normal(m1, 0.5);
      st.sa[layout_.attribute(0, i, 1).sa_off] = rng.normal(0.0, sd23);
      st.sa[layout_.attribute(0, i, 2).sa_off] = rng.normal(0.0, sd23);
    }
    const int n_totals = layout_.counts()[1];
    for (int c = 0; c < n_totals; ++c) {
      for (int j = 0; j < 3; ++j)
        st.sa[layout_.attribute(1, c, j).sa_off] = rng.normal(0.0, 0.01);
      st.sa[layout_.attribute(1, c, 3).sa_off] = rng.normal(0.0, 0.0);
    }
    return st;
  }

  Oocg ground_truth_graph() const override {
    const OomdpSchema& s = schema();
    Oocg g = empty_graph(s);
    auto local = [&](int u, int v) { g.set(s, {true, 0, u, 0, v}, true); };
    local(0, 0);  // S1 -> S1'
    local(3, 0);  // A  -> S1'
    local(0, 1);  // S1 -> S2'
    local(1, 1);  // S2 -> S2'
    local(1, 2);  // S2 -> S3'
    local(2, 2);  // S3 -> S3'
    local(3, 2);  // A  -> S3'
    for (int j = 0; j < 4; ++j) g.set(s, {true, 1, j, 1, j}, true);  // Total locals
    for (int j = 0; j < 3; ++j) g.set(s, {false, 0, j, 1, j}, true);  // Block.Sj -> Total.Sj'
    return g;
  }

  BipartiteAdjacency ground_truth_adjacency() const override {
    if (!asymmetric_) return Env::ground_truth_adjacency();
    BipartiteAdjacency adj = BipartiteAdjacency::zeros(layout_.n(), layout_.n_state());
    for (int i = 0; i < n_blocks_; ++i) {
      auto link = [&](int uf, int vf) {
        adj.set(layout_.attribute(0, i, uf).var_sa, layout_.attribute(0, i, vf).var_sp, true);
      };
      link(0, 0);
      link(3, 0);
      link(0, 1);
      link(1, 1);
      link(1, 2);
      link(2, 2);
      link(3, 2);
    }
    for (int c = 0; c < n_blocks_; ++c) {
      for (int j = 0; j < 4; ++j)
        adj.set(layout_.attribute(1, c, j).var_sa, layout_.attribute(1, c, j).var_sp, true);
      // the c-th Total summarizes blocks 0..c only
      for (int i = 0; i <= c; ++i)
        for (int j = 0; j < 3; ++j)
          adj.set(layout_.attribute(0, i, j).var_sa, layout_.attribute(1, c, j).var_sp, true);
    }
    return adj;
  }

  int episode_cap() const override { return 50; }
  std::string default_policy() const override { return "gaussian"; }

 protected:
  void transition(const EnvState& state, NoiseSource& noise, EnvState& next) const override {
    for (int i = 0; i < n_blocks_; ++i) {
      noise.begin_instance(0, i);
      const double s1 = state.sa[layout_.attribute(0, i, 0).sa_off];
      const double s2 = state.sa[layout_.attribute(0, i, 1).sa_off];
      const double s3 = state.sa[layout_.attribute(0, i, 2).sa_off];
      const double ta = std::tanh(state.sa[layout_.attribute(0, i, 3).sa_off]);
      next.sa[layout_.attribute(0, i, 0).sa_off] = s1 - 0.3 * ta + noise.normal(0.0, 0.01);
      next.sa[layout_.attribute(0, i, 1).sa_off] =
          0.5 * s1 + s2 + noise.normal(0.0, 0.01);
      next.sa[layout_.attribute(0, i, 2).sa_off] =
          0.25 * s2 + 0.75 * s3 + ta + noise.normal(0.0, 0.01);
    }
    const int n_totals = layout_.counts()[1];
    for (int c = 0; c < n_totals; ++c) {
      noise.begin_instance(1, c);
      const int upto = asymmetric_ ? c : n_blocks_ - 1;
      for (int j = 0; j < 3; ++j) {
        double mx = state.sa[layout_.attribute(0, 0, j).sa_off];
        for (int i = 1; i <= upto; ++i)
          mx = std::max(mx, state.sa[layout_.attribute(0, i, j).sa_off]);
        const double tj = state.sa[layout_.attribute(1, c, j).sa_off];
        next.sa[layout_.attribute(1, c, j).sa_off] = 0.5 * tj + 0.5 * mx;
      }
      next.sa[layout_.attribute(1, c, 3).sa_off] =
          state.sa[layout_.attribute(1, c, 3).sa_off] + 1.0 + noise.normal(0.0, 0.01);
    }
  }

  double reward(const EnvState&, const EnvState&) const override { return 0.0; }
  bool is_terminal(const EnvState&) const override { return false; }

 private:
  int n_blocks_;
  bool asymmetric_;
};

// 8x8 grid world. The mouse eats, starves, gets trapped and hunted; food,
// monsters and traps follow their own simple rules.
class MouseEnv : public Env {
 public:
  MouseEnv(int n_food, int n_monster, int n_trap)
      : Env("mouse",
            InstanceLayout(mouse_schema(), {1, n_food, n_monster, n_trap})),
        n_food_(n_food),
        n_monster_(n_monster),
        n_trap_(n_trap) {
    if (n_food < 0 || n_monster < 0 || n_trap < 0) throw EnvError("negative mouse counts");
    if (n_food + n_trap > 64) throw EnvError("too many objects for the grid");
  }

  EnvState reset(Rng& rng, bool ood) const override {
    EnvState st;
    st.sa.assign(layout_.sa_scalar_width(), 0.0);

    auto set_pos = [&](int ci, int ii, int x, int y) {
      const int off = layout_.attribute(ci, ii, pos_field(ci)).sa_off;
      st.sa[off] = x;
      st.sa[off + 1] = y;
    };

    st.sa[layout_.attribute(0, 0, 0).sa_off] = 10.0;  // Health
    st.sa[layout_.attribute(0, 0, 1).sa_off] = 60.0;  // Hunger
    set_pos(0, 0, static_cast<int>(rng.uniform_int(8)), static_cast<int>(rng.uniform_int(8)));

    std::vector<bool> occupied(64, false);
    auto free_cell = [&]() {
      while (true) {
        const int x = static_cast<int>(rng.uniform_int(8));
        const int y = static_cast<int>(rng.uniform_int(8));
        if (!occupied[y * 8 + x]) {
          occupied[y * 8 + x] = true;
          return std::pair<int, int>{x, y};
        }
      }
    };

    for (int i = 0; i < n_food_; ++i) {
      auto [x, y] = free_cell();
      set_pos(1, i, x, y);
      const double bias = (ood ? y : x) / 7.0;
      st.sa[layout_.attribute(1, i, 0).sa_off] = 20.0 + 20.0 * bias + rng.normal(0.0, 1.0);
    }
    for (int i = 0; i < n_monster_; ++i) {
      set_pos(2, i, static_cast<int>(rng.uniform_int(8)), static_cast<int>(rng.uniform_int(8)));
      st.sa[layout_.attribute(2, i, 0).sa_off] = rng.normal(0.0, ood ? 3.0 : 1.0);
    }
    for (int i = 0; i < n_trap_; ++i) {
      auto [x, y] = free_cell();
      set_pos(3, i, x, y);
      st.sa[layout_.attribute(3, i, 0).sa_off] = 1.0 + static_cast<double>(rng.uniform_int(5));
    }
    return st;
  }

  Oocg ground_truth_graph() const override {
    const OomdpSchema& s = schema();
    Oocg g = empty_graph(s);
    auto local = [&](int c, int u, int v) { g.set(s, {true, c, u, c, v}, true); };
    auto global = [&](int cl, int u, int ck, int v) { g.set(s, {false, cl, u, ck, v}, true); };
    // Mouse: Health' <- Health, Hunger, Position; Hunger' <- Hunger, Position;
    //        Position' <- Position, Move
    local(0, 0, 0);
    local(0, 1, 0);
    local(0, 2, 0);
    local(0, 1, 1);
    local(0, 2, 1);
    local(0, 2, 2);
    local(0, 3, 2);
    // Food: Amount' <- Amount, Position; Position' <- Position
    local(1, 0, 0);
    local(1, 1, 0);
    local(1, 1, 1);
    // Monster: Noise' <- Noise; Position' <- Position
    local(2, 0, 0);
    local(2, 1, 1);
    // Trap: Duration' <- Duration, Position; Position' <- Position
    local(3, 0, 0);
    local(3, 1, 0);
    local(3, 1, 1);
    global(2, 1, 0, 0);  // Monster.Position -> Mouse.Health
    global(1, 0, 0, 1);  // Food.Amount -> Mouse.Hunger
    global(1, 1, 0, 1);  // Food.Position -> Mouse.Hunger
    global(3, 0, 0, 2);  // Trap.Duration -> Mouse.Position
    global(3, 1, 0, 2);  // Trap.Position -> Mouse.Position
    global(0, 2, 1, 0);  // Mouse.Position -> Food.Amount
    global(0, 2, 3, 0);  // Mouse.Position -> Trap.Duration
    return g;
  }

  int episode_cap() const override { return 100; }
  std::string default_policy() const override { return "uniform"; }
  bool has_reward() const override { return true; }

 protected:
  void transition(const EnvState& state, NoiseSource& noise, EnvState& next) const override {
    const int mpos_off = layout_.attribute(0, 0, 2).sa_off;
    const int mx = static_cast<int>(state.sa[mpos_off]);
    const int my = static_cast<int>(state.sa[mpos_off + 1]);

    double eaten = 0.0;
    bool on_food = false;
    for (int i = 0; i < n_food_; ++i) {
      const int off = layout_.attribute(1, i, 1).sa_off;
      if (static_cast<int>(state.sa[off]) == mx && static_cast<int>(state.sa[off + 1]) == my) {
        on_food = true;
        eaten += state.sa[layout_.attribute(1, i, 0).sa_off];
      }
    }
    bool monster_contact = false;
    for (int i = 0; i < n_monster_; ++i) {
      const int off = layout_.attribute(2, i, 1).sa_off;
      if (static_cast<int>(state.sa[off]) == mx && static_cast<int>(state.sa[off + 1]) == my)
        monster_contact = true;
    }
    bool trapped = false;
    for (int i = 0; i < n_trap_; ++i) {
      const int poff = layout_.attribute(3, i, 1).sa_off;
      if (static_cast<int>(state.sa[poff]) == mx &&
          static_cast<int>(state.sa[poff + 1]) == my &&
          state.sa[layout_.attribute(3, i, 0).sa_off] > 0.0)
        trapped = true;
    }

    noise.begin_instance(0, 0);
    const double health = state.sa[layout_.attribute(0, 0, 0).sa_off];
    const double hunger = state.sa[layout_.attribute(0, 0, 1).sa_off];
    double hunger_next = on_food ? std::min(100.0, hunger + eaten) : std::max(0.0, hunger - 1.0);
    double delta = 0.0;
    if (hunger < 25.0) delta -= 1.0;
    if (hunger > 75.0) delta += 1.0;
    if (monster_contact) delta -= 5.0;
    const double health_next = std::clamp(health + delta, -6.0, 10.0);
    next.sa[layout_.attribute(0, 0, 0).sa_off] = health_next;
    next.sa[layout_.attribute(0, 0, 1).sa_off] = hunger_next;
    int nx = mx, ny = my;
    if (!trapped) {
      const int move = static_cast<int>(state.sa[layout_.attribute(0, 0, 3).sa_off]);
      switch (move) {
        case 0: ny = std::min(7, my + 1); break;  // north
        case 1: ny = std::max(0, my - 1); break;  // south
        case 2: nx = std::min(7, mx + 1); break;  // east
        case 3: nx = std::max(0, mx - 1); break;  // west
        default: break;                           // stay
      }
    }
    next.sa[mpos_off] = nx;
    next.sa[mpos_off + 1] = ny;

    for (int i = 0; i < n_food_; ++i) {
      noise.begin_instance(1, i);
      const int poff = layout_.attribute(1, i, 1).sa_off;
      const bool here = static_cast<int>(state.sa[poff]) == mx &&
                        static_cast<int>(state.sa[poff + 1]) == my;
      const double amount = state.sa[layout_.attribute(1, i, 0).sa_off];
      next.sa[layout_.attribute(1, i, 0).sa_off] =
          here ? 0.0 : amount + noise.normal(1.0, 0.1);
      next.sa[poff] = state.sa[poff];
      next.sa[poff + 1] = state.sa[poff + 1];
    }
    for (int i = 0; i < n_monster_; ++i) {
      noise.begin_instance(2, i);
      next.sa[layout_.attribute(2, i, 0).sa_off] =
          state.sa[layout_.attribute(2, i, 0).sa_off] + noise.normal(0.0, 0.1);
      const int poff = layout_.attribute(2, i, 1).sa_off;
      const int gx = static_cast<int>(state.sa[poff]);
      const int gy = static_cast<int>(state.sa[poff + 1]);
      // stay plus the in-grid 4-neighbourhood, fixed option order
      int opts[5][2] = {{gx, gy}, {gx, gy + 1}, {gx, gy - 1}, {gx + 1, gy}, {gx - 1, gy}};
      int valid[5][2];
      int n_valid = 0;
      for (auto& o : opts)
        if (o[0] >= 0 && o[0] < 8 && o[1] >= 0 && o[1] < 8) {
          valid[n_valid][0] = o[0];
          valid[n_valid][1] = o[1];
          ++n_valid;
        }
      const int pick = static_cast<int>(noise.uniform_int(n_valid));
      next.sa[poff] = valid[pick][0];
      next.sa[poff + 1] = valid[pick][1];
    }
    for (int i = 0; i < n_trap_; ++i) {
      noise.begin_instance(3, i);
      const int poff = layout_.attribute(3, i, 1).sa_off;
      const double dur = state.sa[layout_.attribute(3, i, 0).sa_off];
      const bool here = static_cast<int>(state.sa[poff]) == mx &&
                        static_cast<int>(state.sa[poff + 1]) == my;
      next.sa[layout_.attribute(3, i, 0).sa_off] = (here && dur > 0.0) ? dur - 1.0 : dur;
      next.sa[poff] = state.sa[poff];
      next.sa[poff + 1] = state.sa[poff + 1];
    }
  }

  double reward(const EnvState& state, const EnvState& next) const override {
    const double health = state.sa[layout_.attribute(0, 0, 0).sa_off];
    const double hunger = state.sa[layout_.attribute(0, 0, 1).sa_off];
    const double health_next = next.sa[layout_.attribute(0, 0, 0).sa_off];
    const double hunger_next = next.sa[layout_.attribute(0, 0, 1).sa_off];
    return 0.01 * hunger + (health_next - health) + 0.05 * (hunger_next - hunger);
  }

  bool is_terminal(const EnvState& next) const override {
    return next.sa[layout_.attribute(0, 0, 0).sa_off] < 0.0;
  }

 private:
  static int pos_field(int class_idx) { return class_idx == 0 ? 2 : 1; }
  int n_food_, n_monster_, n_trap_;
};

}  // namespace

StepResult Env::step(const EnvState& state, const std::vector<double>& actions,
                     NoiseSource& noise) const {
  if (state.terminal) throw EnvError("step on terminal state");
  validate_actions(actions);
  EnvState in = state;
  scatter_actions(in.sa, actions);
  StepResult out;
  out.next.sa.assign(layout_.sa_scalar_width(), 0.0);
  out.next.step = state.step + 1;
  transition(in, noise, out.next);
  out.done = is_terminal(out.next) || out.next.step >= episode_cap();
  out.next.terminal = out.done;
  out.reward = reward(in, out.next);
  return out;
}

BipartiteAdjacency Env::ground_truth_adjacency() const {
  return ground_graph(ground_truth_graph(), layout_);
}

int Env::action_width() const {
  int w = 0;
  for (const Attribute& a : layout_.attributes()) {
    const FieldSpec& f = layout_.schema().classes[a.class_idx].fields[a.field_idx];
    if (f.kind == FieldKind::kAction) w += f.domain.value_width();
  }
  return w;
}

void Env::validate_actions(const std::vector<double>& actions) const {
  if (static_cast<int>(actions.size()) != action_width())
    throw EnvError("action vector has wrong width");
  int k = 0;
  for (const Attribute& a : layout_.attributes()) {
    const FieldSpec& f = layout_.schema().classes[a.class_idx].fields[a.field_idx];
    if (f.kind != FieldKind::kAction) continue;
    if (f.domain.type == DomainType::kCategorical) {
      for (std::size_t c = 0; c < f.domain.cards.size(); ++c) {
        const double v = actions[k++];
        if (v != std::floor(v) || v < 0 || v >= f.domain.cards[c])
          throw EnvError("action out of domain");
      }
    } else {
      for (int c = 0; c < f.domain.dim; ++c) {
        const double v = actions[k++];
        if (!std::isfinite(v)) throw EnvError("action out of domain");
        if (!f.domain.lo.empty() && (v < f.domain.lo[c] || v > f.domain.hi[c]))
          throw EnvError("action out of domain");
      }
    }
  }
}

void Env::scatter_actions(std::vector<double>& sa, const std::vector<double>& actions) const {
  int k = 0;
  for (const Attribute& a : layout_.attributes()) {
    const FieldSpec& f = layout_.schema().classes[a.class_idx].fields[a.field_idx];
    if (f.kind != FieldKind::kAction) continue;
    for (int c = 0; c < f.domain.value_width(); ++c) sa[a.sa_off + c] = actions[k++];
  }
}

std::vector<double> Env::gather_actions(const std::vector<double>& sa) const {
  std::vector<double> out;
  for (const Attribute& a : layout_.attributes()) {
    const FieldSpec& f = layout_.schema().classes[a.class_idx].fields[a.field_idx];
    if (f.kind != FieldKind::kAction) continue;
    for (int c = 0; c < f.domain.value_width(); ++c) out.push_back(sa[a.sa_off + c]);
  }
  return out;
}

std::unique_ptr<Env> make_env(const EnvConfig& cfg) {
  auto count = [&](const std::string& name, int fallback) {
    auto it = cfg.counts.find(name);
    return it == cfg.counts.end() ? fallback : it->second;
  };
  if (cfg.name == "block") {
    const int k = count("Block", 0);
    if (count("Total", 1) != 1) throw EnvError("block env has exactly one Total");
    return std::make_unique<BlockEnv>(k, false);
  }
  if (cfg.name == "asymblock") {
    const int k = count("Block", 0);
    if (count("Total", k) != k) throw EnvError("asymblock pairs one Total per Block");
    return std::make_unique<BlockEnv>(k, true);
  }
  if (cfg.name == "mouse") {
    if (count("Mouse", 1) != 1) throw EnvError("mouse env has exactly one Mouse");
    return std::make_unique<MouseEnv>(count("Food", 0), count("Monster", 0), count("Trap", 0));
  }
  throw EnvError("unknown environment: " + cfg.name);
}

std::vector<double> sample_policy_action(const Env& env, const std::string& policy, Rng& rng) {
  if (policy != "uniform" && policy != "gaussian")
    throw EnvError("unknown policy: " + policy);
  std::vector<double> out;
  const InstanceLayout& layout = env.layout();
  for (const Attribute& a : layout.attributes()) {
    const FieldSpec& f = layout.schema().classes[a.class_idx].fields[a.field_idx];
    if (f.kind != FieldKind::kAction) continue;
    if (f.domain.type == DomainType::kCategorical) {
      for (int card : f.domain.cards)
        out.push_back(static_cast<double>(rng.uniform_int(card)));
    } else {
      for (int c = 0; c < f.domain.dim; ++c) {
        if (policy == "gaussian" || f.domain.lo.empty())
          out.push_back(rng.normal(0.0, 1.0));
        else
          out.push_back(rng.uniform(f.domain.lo[c], f.domain.hi[c]));
      }
    }
  }
  return out;
}

Dataset collect(const EnvConfig& cfg, const std::string& policy, int steps,
                double noise_sigma, std::uint64_t seed, bool ood,
                const std::optional<CountSampler>& count_sampler) {
  if (steps < 1) throw EnvError("collect needs at least one step");
  if (noise_sigma < 0) throw EnvError("negative noise sigma");

  Dataset ds;
  {
    auto probe = make_env(cfg);
    ds.schema = probe->schema();
  }
  ds.meta.env = cfg.name;
  ds.meta.seed = seed;
  ds.meta.policy = policy;
  ds.meta.ood = ood;
  ds.meta.noise_sigma = noise_sigma;

  int episode = 0;
  while (static_cast<int>(ds.records.size()) < steps) {
    EnvConfig ep_cfg = cfg;
    if (count_sampler) {
      Rng counts_rng = Rng::stream(seed, "counts", episode);
      if (!count_sampler->pool.empty()) {
        const auto& pick =
            count_sampler->pool[counts_rng.uniform_int(count_sampler->pool.size())];
        for (const auto& [name, count] : pick) ep_cfg.counts[name] = count;
      } else {
        for (const auto& [name, range] : count_sampler->ranges)
          ep_cfg.counts[name] = range.first + static_cast<int>(counts_rng.uniform_int(
                                                  range.second - range.first + 1));
      }
    }
    auto env = make_env(ep_cfg);
    const InstanceLayout& layout = env->layout();
    Rng ep_rng = Rng::stream(seed, "episode", episode);
    Rng noise_rng = Rng::stream(seed, "obsnoise", episode);
    RngNoise sim_noise(ep_rng);

    EnvState state = env->reset(ep_rng, ood);
    while (!state.terminal && static_cast<int>(ds.records.size()) < steps) {
      const std::vector<double> actions = sample_policy_action(*env, policy, ep_rng);
      StepResult sr = env->step(state, actions, sim_noise);

      TransitionRecord rec;
      rec.counts = layout.counts();
      rec.sa = state.sa;
      env->scatter_actions(rec.sa, actions);
      rec.sp = extract_next_state(layout, sr.next.sa);
      if (noise_sigma > 0.0) {
        for (const Attribute& a : layout.attributes()) {
          const FieldSpec& f = layout.schema().classes[a.class_idx].fields[a.field_idx];
          if (f.kind != FieldKind::kState || f.domain.type != DomainType::kContinuous)
            continue;
          for (int c = 0; c < f.domain.dim; ++c) {
            rec.sa[a.sa_off + c] += noise_rng.normal(0.0, noise_sigma);
            rec.sp[a.sp_off + c] += noise_rng.normal(0.0, noise_sigma);
          }
        }
      }
      ds.records.push_back(std::move(rec));
      state = std::move(sr.next);
    }
    ++episode;
  }
  return ds;
}

}  // namespace oocdm

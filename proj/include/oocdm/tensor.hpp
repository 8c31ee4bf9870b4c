#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace oocdm {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 64-byte-aligned storage keeps every tensor base address identical in
// alignment class, so vectorized kernels take the same code path on every
// run and results stay bit-reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) {
    const std::size_t bytes = ((n * sizeof(T) + kAlign - 1) / kAlign) * kAlign;
    void* p = std::aligned_alloc(kAlign, bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { std::free(p); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

using AlignedVec = std::vector<double, AlignedAllocator<double>>;

// Dense row-major tensor of 64-bit floats, rank 1 or 2.
struct Tensor {
  std::vector<int> shape;
  AlignedVec data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d);
  Tensor(std::vector<int> s, AlignedVec d);

  static Tensor zeros(std::vector<int> s);
  static Tensor full(std::vector<int> s, double v);
  static Tensor vec(std::vector<double> d);
  static Tensor matrix(int rows, int cols, std::vector<double> d);
  static Tensor scalar(double v);

  int rank() const { return static_cast<int>(shape.size()); }
  std::size_t numel() const { return data.size(); }
  int rows() const { return rank() == 2 ? shape[0] : 1; }
  int cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

// Sum whose result depends only on the multiset of addends, not their order.
double stable_sum(std::span<double> xs);

// Named ordered parameter collection; slot indices are stable.
class ParamStore {
 public:
  int add(const std::string& name, Tensor t);
  int find(const std::string& name) const;  // -1 if absent
  int size() const { return static_cast<int>(items_.size()); }
  Tensor& tensor(int slot) { return items_[slot].second; }
  const Tensor& tensor(int slot) const { return items_[slot].second; }
  const std::string& name(int slot) const { return items_[slot].first; }
  std::size_t scalar_count() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

using Var = int;
using GradMap = std::vector<Tensor>;  // indexed by parameter slot

enum class Op : std::uint8_t {
  kConst,
  kParam,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kShift,
  kConcatCols,
  kRelu,
  kTanh,
  kSoftplus,
  kExp,
  kLog,
  kReduceSum,
  kReduceMax,
  kRowSum,
  kBroadcastRows,
  kAffine,      // x @ w + row bias
  kAffineRelu,  // relu(x @ w + row bias), the MLP hot path
  kAttention,
  kGaussLogProb,
  kCatLogProb,
};

// Reverse-mode tape. Nodes reference earlier nodes only; parameters are
// leaves tagged with their store slot. Confined to one thread.
class Tape {
 public:
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

  Var constant(Tensor t);
  // memoized per slot: repeated requests return the same leaf
  Var param(const ParamStore& store, int slot);
  void reserve(std::size_t nodes) { nodes_.reserve(nodes); }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var shift(Var a, double s);
  Var concat_cols(std::span<const Var> xs);
  Var relu(Var a);
  Var tanh(Var a);
  Var softplus(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var reduce_sum(Var a);  // -> [1,1]
  Var reduce_max(Var a);  // -> [1,1]
  Var row_sum(Var a);     // -> [rows,1]
  Var broadcast_rows(Var a, int rows);
  Var affine(Var x, Var w, Var b, bool relu_out);
  // Row-batched scaled dot-product attention over an attendee list.
  // q: [B,dk], keys/values: per attendee [B,dk]/[B,dv]. Empty attendee list
  // yields the zero context of width dv_hint. Output [B,dv].
  Var attention(Var q, std::span<const Var> keys, std::span<const Var> values,
                int dv_hint = 0);
  Var gaussian_log_prob(Var x, Var mu, Var sigma);
  // idx holds integral category indices, shape [B,1] (or [B]); logits [B,c].
  Var categorical_log_prob(Var idx, Var logits);

  const Tensor& value(Var v) const { return nodes_[v].val; }
  std::size_t size() const { return nodes_.size(); }
  void clear();
  // hash of all relu/max activation patterns; differs when a kink was crossed
  std::uint64_t kink_pattern() const;

  // dRoot/dParam for every slot of `store`; zero tensors for slots the root
  // does not reach. root must be scalar.
  GradMap backward(Var root, const ParamStore& store) const;

 private:
  struct Node {
    Op op;
    std::vector<int> in;
    Tensor val;
    Tensor cache;
    double scalar = 0.0;
    int aux = 0;
    int slot = -1;
    bool needs_grad = false;
  };

  Var push(Node n);
  const Tensor& v(Var i) const { return nodes_[i].val; }
  bool ng(Var i) const { return nodes_[i].needs_grad; }

  std::vector<Node> nodes_;
  std::vector<Var> param_memo_;
  bool check_finite_;
};

// Test/REPL convenience mirroring the primitive table by name. Scalar
// arguments ride along as extra single-element tensors ("scale", "shift",
// "broadcast").
Tensor eval_primitive(const std::string& kind, const std::vector<Tensor>& inputs);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam moments per parameter; steps in the ascent direction.
class AdamState {
 public:
  AdamState(const ParamStore& store, AdamConfig cfg = {});
  void ascent_step(ParamStore& store, const GradMap& grads);
  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  const Tensor& first_moment(int slot) const { return m_[slot]; }
  const Tensor& second_moment(int slot) const { return v_[slot]; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::int64_t step_ = 0;
};

// Compares backward() against central finite differences of the rebuilt
// objective; returns the worst relative error over all parameter scalars.
// Coordinates whose +/-step evaluations land on different relu/max activation
// patterns are not comparable (the objective is non-smooth there) and are
// skipped, per the smoothness precondition.
double grad_check(const std::function<Var(Tape&, const ParamStore&)>& build,
                  const ParamStore& params, double step);

}  // namespace oocdm

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gacd/rng.hpp"

namespace gacd::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m;  // Adam moments
  Matrix v;
  bool frozen = false;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named parameters in insertion order, with gradients and Adam state.
class ParamStore {
 public:
  int add(const std::string& name, Matrix init);
  /// Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
  int add_glorot(const std::string& name, int rows, int cols, Rng& rng);
  int add_zeros(const std::string& name, int rows, int cols);
  int add_constant(const std::string& name, int rows, int cols, double v);

  Param& at(int i) { return params_.at(static_cast<std::size_t>(i)); }
  const Param& at(int i) const { return params_.at(static_cast<std::size_t>(i)); }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  int index_of(const std::string& name) const;
  int size() const { return static_cast<int>(params_.size()); }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  void zero_grad();
  /// Scales all gradients so their global L2 norm is at most max_norm; returns the pre-clip norm.
  double clip_grad_norm(double max_norm);
  /// One Adam update on non-frozen parameters. Zero gradients leave parameters unchanged.
  void adam_step(const AdamConfig& cfg);
  /// Freeze or unfreeze every parameter whose name starts with prefix.
  void set_frozen(const std::string& prefix, bool frozen);
  std::int64_t step_count() const { return step_; }

  /// FNV-1a over names and raw parameter bytes.
  std::uint64_t hash(const std::string& prefix = "") const;
  std::size_t num_scalars() const;

 private:
  std::vector<Param> params_;
  std::map<std::string, int> index_;
  std::int64_t step_ = 0;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order and backward visits them once in reverse.
class Tape {
 public:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    int param = -1;
    ParamStore* store = nullptr;
    std::function<void(Tape&, int)> backward;
  };

  Var constant(Matrix value);
  Var param(ParamStore& store, int index);
  Var param(ParamStore& store, const std::string& name) { return param(store, store.index_of(name)); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates into parameter gradients (frozen ones skipped).
  void backward(Var loss);

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }
  bool requires_grad(Var v) const { return node(v.id).requires_grad; }
  /// Gradient buffer of a node (allocated zero on first use).
  Matrix& grad(int id);

  Var push(Matrix value, std::vector<int> inputs, std::function<void(Tape&, int)> backward);

  /// Number of times backward closures ran in the last backward() call.
  int last_backward_visits() const { return visits_; }

 private:
  std::vector<Node> nodes_;
  int visits_ = 0;
};

// ---- elementwise and linear algebra ----
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1 x c row over every row of a
Var mul_row(Var a, Var row);
Var mul_col(Var a, Var col);  // broadcast an r x 1 column over every column of a
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var a);
Var gelu(Var a);  // tanh approximation
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var minimum(Var a, Var b);
Var clip(Var a, double lo, double hi);  // zero gradient outside [lo, hi]
Var transpose(Var a);
Var sum(Var a);   // 1 x 1
Var mean(Var a);  // 1 x 1
Var row_sum(Var a);  // r x 1
Var row_norm(Var a, double eps = 1e-12);  // sqrt(sum_j a_ij^2 + eps), r x 1
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, int start, int count);
Var gather_rows(Var a, const std::vector<int>& rows);
Var gather_elems(Var a, const std::vector<std::pair<int, int>>& idx);  // k x 1
/// out[dst[e]] += w[e] * a[src[e]] for every entry e; out has `out_rows` rows.
Var scatter_add(Var a, const std::vector<int>& src, const std::vector<int>& dst, const std::vector<double>& w,
                int out_rows);
/// Mean of rows within each segment [offsets[g], offsets[g+1]).
Var segment_mean(Var a, const std::vector<int>& offsets);
/// Row-wise (x - mean) / sqrt(var + eps).
Var row_standardize(Var a, double eps = 1e-5);
/// Elementwise binary cross-entropy on logits with constant targets.
Var bce_with_logits(Var logits, const Matrix& targets);

/// Log-softmax over each segment of an n x 1 column, restricted to mask != 0.
/// Masked entries are set to 0 and receive no gradient. Throws if a segment is fully masked.
Var segment_log_softmax(Var logits, const std::vector<int>& offsets, const std::vector<std::uint8_t>& mask);
/// Row-wise log-softmax restricted to mask (same shape as logits); masked entries as above.
Var row_log_softmax(Var logits, const Matrix& mask);

/// Multi-head attention restricted to each graph segment, with an additive bias
/// table[h, bucket(i, j)] on the logits. q, k, v are n x (heads * dk).
Var segment_attention(Var q, Var k, Var v, Var bias_table, int heads, const std::vector<int>& offsets,
                      const std::vector<std::vector<int>>& buckets);

/// Plain masked softmax; masked entries exactly 0. Throws if all entries are masked.
std::vector<double> masked_softmax(const std::vector<double>& logits, const std::vector<bool>& mask);

// ---- layers ----
enum class Activation { Relu, Gelu, Tanh, Identity };
Var activate(Var x, Activation act);

struct Linear {
  int w = -1;
  int b = -1;
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, bool bias = true);
  Var operator()(Tape& t, ParamStore& store, Var x) const;
};

struct Mlp {
  std::vector<Linear> layers;
  Activation act = Activation::Relu;
  Mlp() = default;
  /// dims = {in, hidden..., out}; activation between layers, none after the last.
  Mlp(ParamStore& store, const std::string& name, const std::vector<int>& dims, Activation act, Rng& rng);
  Var operator()(Tape& t, ParamStore& store, Var x) const;
};

struct LayerNorm {
  int gamma = -1;
  int beta = -1;
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, int dim);
  Var operator()(Tape& t, ParamStore& store, Var x) const;
};

/// Graph structure needed by message passing: directed edges in global node indices.
struct EdgeIndex {
  std::vector<int> src;
  std::vector<int> dst;
  int num_nodes = 0;
  std::vector<double> in_mean_weight;  // 1 / in-degree(dst) per edge
};
EdgeIndex make_edge_index(int num_nodes, const std::vector<std::pair<int, int>>& edges);

/// h'_v = act(W_self h_v + mean_{u -> v} W_nbr h_u). With gated = true each message is
/// scaled by sigmoid(a_src . h_u + a_dst . h_v) before averaging.
struct MpLayer {
  Linear self;
  Linear nbr;
  Linear gate_src;
  Linear gate_dst;
  bool gated = false;
  Activation act = Activation::Relu;
  MpLayer() = default;
  MpLayer(ParamStore& store, const std::string& name, int in, int out, bool gated, Activation act, Rng& rng);
  Var operator()(Tape& t, ParamStore& store, Var x, const EdgeIndex& edges) const;
};

inline constexpr int kSpdBuckets = 10;  // hop distance 0..8, then "far"
int spd_bucket(int distance);

/// Pre-LN transformer block with shortest-path attention bias.
struct GraphormerLayer {
  LayerNorm ln1;
  LayerNorm ln2;
  Linear q;
  Linear k;
  Linear v;
  Linear o;
  Mlp ffn;
  int bias = -1;  // heads x kSpdBuckets
  int heads = 1;
  GraphormerLayer() = default;
  GraphormerLayer(ParamStore& store, const std::string& name, int dim, int heads, Activation act, Rng& rng);
  Var operator()(Tape& t, ParamStore& store, Var x, const std::vector<int>& offsets,
                 const std::vector<std::vector<int>>& buckets) const;
};

// ---- checking and persistence ----
struct FdReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  int worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  int checked = 0;
};

/// Compares tape gradients of f against central differences on non-frozen parameters.
/// Relative error is |analytic - numeric| / max(floor, |numeric|). When max_entries_per_param > 0,
/// a deterministic subset of entries is checked per parameter.
FdReport finite_difference_check(const std::function<Var(Tape&, ParamStore&)>& f, ParamStore& store,
                                 double h = 1e-5, double floor = 1e-8, int max_entries_per_param = 0,
                                 std::uint64_t seed = 0);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  std::vector<std::int64_t> dims;
  std::vector<float> data;
};

void write_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint(const std::string& path);
std::vector<CheckpointRecord> to_records(const ParamStore& store);
/// Copies records into matching parameters; throws on missing names or shape mismatch.
void load_records(ParamStore& store, const std::vector<CheckpointRecord>& records);

}  // namespace gacd::nn

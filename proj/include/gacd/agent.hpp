#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "gacd/graphobs.hpp"
#include "gacd/neural.hpp"
#include "gacd/otmap.hpp"

namespace gacd {

enum class Variant { M1, M2, M3 };
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

inline constexpr int kActionKinds = 5;
/// Action-kind index -> blue action kind (Sleep, Analyse, Remove, Restore, DeployDecoy).
BlueKind blue_kind_of(int kind);

struct PpoConfig {
  double clip = 0.2;
  double gamma = 0.99;
  double lambda = 0.95;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  int epochs = 4;
  int minibatch = 64;
  double lr = 3e-4;
  double max_grad_norm = 0.5;
};

struct AgentConfig {
  Variant variant = Variant::M1;
  int width = 64;
  int heads = 4;
  int layers = 2;
  int latent_dim = 16;
  int max_degree = 16;  // degree embedding buckets (graph transformer encoders)
  nn::Activation activation = nn::Activation::Gelu;
  bool gated = false;   // attention-style gating in the M1 message passing
  bool use_ot = true;   // false: the policy consumes the latent code directly
  int forward_map_hidden = 64;
  PpoConfig ppo;
  double w_ppo = 1.0;
  double w_mse = 1.0;
  double w_fgw = 1.0;
  double w_ae = 1.0;
  double kl_weight = 0.1;  // KL weight inside the autoencoder loss
  int sdot_refit_every = 50;
  int sdot_codes = 512;
  int sdot_mc_samples = 8192;
  int fgw_samples = 64;
  double pretrain_lr = 1e-3;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const AgentConfig& c);
void from_json(const nlohmann::json& j, AgentConfig& c);

/// Tensors for one batch of observation graphs.
struct GraphInput {
  BatchedGraph batch;
  nn::Matrix features;                        // N x 7
  nn::EdgeIndex edges;
  std::vector<std::vector<int>> spd_buckets;  // per graph, m*m (transformer encoders only)
  std::vector<int> degree_bucket;             // per node
  std::vector<std::uint8_t> host_mask;        // per node
  nn::Matrix kind_mask;                       // N x 5; rows of non-host nodes are all ones
  std::vector<int> graph_of;                  // per node
  int num_graphs() const { return batch.num_graphs(); }
  int num_nodes() const { return batch.num_nodes(); }
};

GraphInput make_graph_input(const std::vector<const AttributedGraph*>& graphs, int max_degree, bool need_spd);

struct Encoding {
  nn::Var node;    // N x width
  nn::Var mu;      // N x latent (node latents)
  nn::Var logvar;  // N x latent (M3 only)
  nn::Var z;       // G x latent, mean-pooled code
};

struct PolicyOutput {
  Encoding enc;
  nn::Var u;          // G x latent, representation fed to the heads
  nn::Var node_logp;  // N x 1, masked log-softmax within each graph
  nn::Var kind_logp;  // N x 5, masked log-softmax per node
  nn::Var value;      // G x 1
  nn::Var entropy;    // G x 1, joint entropy of (node, kind)
};

struct PpoTerms {
  nn::Var loss;
  nn::Var policy;
  nn::Var value;
  nn::Var entropy;
};

/// mean(-min(r A, clip(r) A)) + c_v mean((V - R)^2) - c_e mean(H), r = exp(logp - old_logp).
PpoTerms ppo_objective(nn::Tape& t, nn::Var logp, nn::Var entropy, nn::Var value, const std::vector<double>& old_logp,
                       const std::vector<double>& advantages, const std::vector<double>& returns, const PpoConfig& cfg);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// GAE over one episode-ordered segment. dones[t] cuts bootstrapping after step t;
/// last_value bootstraps the final step when it is not done.
GaeResult gae_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                         const std::vector<bool>& dones, double last_value, double gamma, double lambda);

/// In-place zero mean, unit variance (no-op scaling for fewer than 2 entries).
void normalize_advantages(std::vector<double>& adv);

/// BCE over adjacency slots (inner-product decoder, self loops included), squared feature
/// error (both averaged) and the per-node KL to a unit Gaussian scaled by 1 / nodes per graph.
/// total = bce + features + kl_weight * kl.
struct AeTerms {
  nn::Var total;
  nn::Var bce;
  nn::Var features;
  nn::Var kl;
};

/// Target adjacency (undirected skeleton plus self loops) for one graph.
nn::Matrix adjacency_target(const AttributedGraph& g);

struct RolloutStep {
  AttributedGraph graph;
  int node = 0;  // local node index
  int kind = 0;
  double logp = 0.0;
  double value = 0.0;
  double reward = 0.0;
  bool done = false;
};

struct UpdateStats {
  double l_ppo = 0.0;
  double l_mse = 0.0;
  double l_fgw = 0.0;
  double l_ae = 0.0;
  double entropy = 0.0;
  int minibatches = 0;
};

struct Decision {
  int node = 0;  // local node index
  int kind = 0;
  double logp = 0.0;
  double value = 0.0;
  BlueAction action;
};

/// Noise-space side of the policy: SDOT map over recent codes, cell statistics and the graphs
/// behind each code.
struct OtState {
  bool ready = false;
  SdotMap map;
  CellStats stats;
  std::vector<AttributedGraph> code_graphs;  // one per (merged) code
  int fits = 0;
  int failures = 0;
  std::string last_error;
};

class GacdAgent {
 public:
  explicit GacdAgent(AgentConfig cfg);

  const AgentConfig& config() const { return cfg_; }
  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }
  const OtState& ot() const { return ot_; }
  bool uses_transformer() const { return cfg_.variant != Variant::M1; }

  GraphInput prepare(const std::vector<const AttributedGraph*>& graphs) const;

  Encoding encode(nn::Tape& t, const GraphInput& in);
  PolicyOutput forward(nn::Tape& t, const GraphInput& in);

  /// Sample (rng != nullptr) or pick the greedy joint argmax; near-ties (1e-9) go to the
  /// lexicographically smallest host label, then the lowest kind.
  std::vector<Decision> act(const std::vector<const AttributedGraph*>& graphs, Rng* rng);
  Decision act(const AttributedGraph& g, Rng* rng);

  /// Node-selection probabilities (0 for non-host nodes).
  std::vector<double> node_distribution(const AttributedGraph& g);
  /// p(kind | node) for every node, N x 5.
  Eigen::MatrixXd kind_distribution(const AttributedGraph& g);
  Eigen::MatrixXd codes(const std::vector<const AttributedGraph*>& graphs);

  // ---- losses ----
  /// Joint log-probability of the chosen (node, kind) pairs; nodes are global batch indices.
  nn::Var chosen_logp(const PolicyOutput& out, const std::vector<int>& nodes, const std::vector<int>& kinds) const;
  nn::Var mse_loss(nn::Tape& t);   // requires ot().ready
  /// Monte-Carlo transport cost (1/n) sum ||x_i - z_tau(x_i)||^2 with codes re-encoded on the tape.
  nn::Var fgw_loss(nn::Tape& t, const std::vector<int>& sample_ids);
  AeTerms ae_loss(nn::Tape& t, const GraphInput& in, const Encoding& enc, std::uint64_t noise_seed);

  /// Fits the SDOT map on the codes of the given graphs (deduplicated, at most sdot_codes).
  /// Returns false and keeps the previous map if the fit fails.
  bool refit_ot(const std::vector<const AttributedGraph*>& graphs, std::uint64_t seed);

  /// One PPO update (epochs x minibatches) on episode-ordered segments.
  UpdateStats update(const std::vector<std::vector<RolloutStep>>& segments, const std::vector<double>& last_values,
                     Rng& rng);

  /// Variational graph autoencoder pretraining (plus the OT terms), then freezing of the encoder.
  std::vector<double> pretrain(const std::vector<AttributedGraph>& corpus, int steps, int batch, Rng& rng);

  void freeze_encoder();
  bool encoder_frozen() const { return frozen_; }
  std::uint64_t encoder_hash() const { return store_.hash("enc."); }
  int updates() const { return updates_; }

  void save(const std::string& path) const;
  static GacdAgent load(const std::string& path);

 private:
  nn::Var heads_input(nn::Tape& t, const GraphInput& in, nn::Var node, nn::Var u) const;

  AgentConfig cfg_;
  nn::ParamStore store_;
  // encoder
  nn::Mlp embed_;
  std::vector<nn::MpLayer> mp_;
  nn::Linear in_proj_;
  int degree_table_ = -1;
  std::vector<nn::GraphormerLayer> gt_;
  nn::LayerNorm out_ln_;
  nn::Linear mu_;
  nn::Linear logvar_;
  // decoder (M3)
  nn::Mlp feat_dec_;
  // forward map and heads
  ForwardMapNet psi_;
  nn::Mlp node_head_;
  nn::Linear node_out_;
  nn::Mlp kind_head_;
  nn::Mlp value_head_;

  OtState ot_;
  std::vector<AttributedGraph> recent_;  // latest observations, oldest first
  bool frozen_ = false;
  int updates_ = 0;
};

}  // namespace gacd

#include "gacd/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace gacd {

using nn::Matrix;
using nn::Tape;
using nn::Var;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::M1: return "M1";
    case Variant::M2: return "M2";
    case Variant::M3: return "M3";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "M1" || s == "m1") return Variant::M1;
  if (s == "M2" || s == "m2") return Variant::M2;
  if (s == "M3" || s == "m3") return Variant::M3;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

BlueKind blue_kind_of(int kind) {
  if (kind < 0 || kind >= kActionKinds) throw std::out_of_range("action kind out of range");
  return static_cast<BlueKind>(kind);
}

namespace {

std::string activation_name(nn::Activation a) {
  switch (a) {
    case nn::Activation::Relu: return "relu";
    case nn::Activation::Gelu: return "gelu";
    case nn::Activation::Tanh: return "tanh";
    case nn::Activation::Identity: return "identity";
  }
  return "?";
}

nn::Activation activation_from(const std::string& s) {
  if (s == "relu") return nn::Activation::Relu;
  if (s == "gelu") return nn::Activation::Gelu;
  if (s == "tanh") return nn::Activation::Tanh;
  if (s == "identity") return nn::Activation::Identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const AgentConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"width", c.width},
                     {"heads", c.heads},
                     {"layers", c.layers},
                     {"latent_dim", c.latent_dim},
                     {"max_degree", c.max_degree},
                     {"activation", activation_name(c.activation)},
                     {"gated", c.gated},
                     {"use_ot", c.use_ot},
                     {"forward_map_hidden", c.forward_map_hidden},
                     {"ppo",
                      {{"clip", c.ppo.clip},
                       {"gamma", c.ppo.gamma},
                       {"lambda", c.ppo.lambda},
                       {"entropy_coef", c.ppo.entropy_coef},
                       {"value_coef", c.ppo.value_coef},
                       {"epochs", c.ppo.epochs},
                       {"minibatch", c.ppo.minibatch},
                       {"lr", c.ppo.lr},
                       {"max_grad_norm", c.ppo.max_grad_norm}}},
                     {"w_ppo", c.w_ppo},
                     {"w_mse", c.w_mse},
                     {"w_fgw", c.w_fgw},
                     {"w_ae", c.w_ae},
                     {"kl_weight", c.kl_weight},
                     {"sdot_refit_every", c.sdot_refit_every},
                     {"sdot_codes", c.sdot_codes},
                     {"sdot_mc_samples", c.sdot_mc_samples},
                     {"fgw_samples", c.fgw_samples},
                     {"pretrain_lr", c.pretrain_lr},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, AgentConfig& c) {
  AgentConfig d;
  c.variant = variant_from_string(j.value("variant", to_string(d.variant)));
  c.width = j.value("width", d.width);
  c.heads = j.value("heads", d.heads);
  c.layers = j.value("layers", d.layers);
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.max_degree = j.value("max_degree", d.max_degree);
  c.activation = activation_from(j.value("activation", activation_name(d.activation)));
  c.gated = j.value("gated", d.gated);
  c.use_ot = j.value("use_ot", d.use_ot);
  c.forward_map_hidden = j.value("forward_map_hidden", d.forward_map_hidden);
  if (j.contains("ppo")) {
    const auto& p = j.at("ppo");
    c.ppo.clip = p.value("clip", d.ppo.clip);
    c.ppo.gamma = p.value("gamma", d.ppo.gamma);
    c.ppo.lambda = p.value("lambda", d.ppo.lambda);
    c.ppo.entropy_coef = p.value("entropy_coef", d.ppo.entropy_coef);
    c.ppo.value_coef = p.value("value_coef", d.ppo.value_coef);
    c.ppo.epochs = p.value("epochs", d.ppo.epochs);
    c.ppo.minibatch = p.value("minibatch", d.ppo.minibatch);
    c.ppo.lr = p.value("lr", d.ppo.lr);
    c.ppo.max_grad_norm = p.value("max_grad_norm", d.ppo.max_grad_norm);
  }
  c.w_ppo = j.value("w_ppo", d.w_ppo);
  c.w_mse = j.value("w_mse", d.w_mse);
  c.w_fgw = j.value("w_fgw", d.w_fgw);
  c.w_ae = j.value("w_ae", d.w_ae);
  c.kl_weight = j.value("kl_weight", d.kl_weight);
  c.sdot_refit_every = j.value("sdot_refit_every", d.sdot_refit_every);
  c.sdot_codes = j.value("sdot_codes", d.sdot_codes);
  c.sdot_mc_samples = j.value("sdot_mc_samples", d.sdot_mc_samples);
  c.fgw_samples = j.value("fgw_samples", d.fgw_samples);
  c.pretrain_lr = j.value("pretrain_lr", d.pretrain_lr);
  c.seed = j.value("seed", d.seed);
}

// ---------------------------------------------------------------- inputs

GraphInput make_graph_input(const std::vector<const AttributedGraph*>& graphs, int max_degree, bool need_spd) {
  GraphInput in;
  in.batch = batch(graphs);
  const int n = in.batch.num_nodes();
  in.features.resize(n, kFeatureDim);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < kFeatureDim; ++k) in.features(i, k) = in.batch.features[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(in.batch.edges.size());
  std::vector<int> indeg(static_cast<std::size_t>(n), 0);
  for (const auto& e : in.batch.edges) {
    pairs.push_back({e.src, e.dst});
    indeg[static_cast<std::size_t>(e.dst)]++;
  }
  in.edges = nn::make_edge_index(n, pairs);
  in.degree_bucket.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) in.degree_bucket[static_cast<std::size_t>(i)] = std::min(indeg[static_cast<std::size_t>(i)], max_degree);

  in.host_mask.assign(static_cast<std::size_t>(n), 0);
  in.kind_mask = Matrix::Ones(n, kActionKinds);
  in.graph_of.resize(static_cast<std::size_t>(n));
  for (int g = 0; g < in.batch.num_graphs(); ++g) {
    const int lo = in.batch.offsets[static_cast<std::size_t>(g)], hi = in.batch.offsets[static_cast<std::size_t>(g) + 1];
    std::vector<int> decoy_targets;
    for (int i = lo; i < hi; ++i) {
      in.graph_of[static_cast<std::size_t>(i)] = g;
      const auto& node = in.batch.nodes[static_cast<std::size_t>(i)];
      if (node.kind == NodeKind::Decoy) decoy_targets.push_back(node.ref);
    }
    bool any_host = false;
    for (int i = lo; i < hi; ++i) {
      const auto& node = in.batch.nodes[static_cast<std::size_t>(i)];
      if (node.kind != NodeKind::Host) continue;
      any_host = true;
      in.host_mask[static_cast<std::size_t>(i)] = 1;
      if (std::find(decoy_targets.begin(), decoy_targets.end(), node.ref) != decoy_targets.end())
        in.kind_mask(i, static_cast<int>(BlueKind::DeployDecoy)) = 0.0;
    }
    if (!any_host) throw std::invalid_argument("observation graph has no host nodes");
  }
  if (need_spd) {
    for (const AttributedGraph* g : graphs) {
      const auto d = shortest_path_distances(*g);
      std::vector<int> b;
      b.reserve(d.size() * d.size());
      for (const auto& row : d)
        for (int x : row) b.push_back(nn::spd_bucket(x));
      in.spd_buckets.push_back(std::move(b));
    }
  }
  return in;
}

// ---------------------------------------------------------------- losses

PpoTerms ppo_objective(Tape& t, Var logp, Var entropy, Var value, const std::vector<double>& old_logp,
                       const std::vector<double>& advantages, const std::vector<double>& returns, const PpoConfig& cfg) {
  const Eigen::Index b = logp.rows();
  if (static_cast<Eigen::Index>(old_logp.size()) != b || static_cast<Eigen::Index>(advantages.size()) != b ||
      static_cast<Eigen::Index>(returns.size()) != b || value.rows() != b || entropy.rows() != b)
    throw std::invalid_argument("ppo_objective: batch size mismatch");
  Matrix old(b, 1), adv(b, 1), ret(b, 1);
  for (Eigen::Index i = 0; i < b; ++i) {
    old(i, 0) = old_logp[static_cast<std::size_t>(i)];
    adv(i, 0) = advantages[static_cast<std::size_t>(i)];
    ret(i, 0) = returns[static_cast<std::size_t>(i)];
  }
  Var ratio = nn::exp(nn::sub(logp, t.constant(old)));
  Var a = t.constant(adv);
  Var surr = nn::minimum(nn::mul(ratio, a), nn::mul(nn::clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), a));
  PpoTerms out;
  out.policy = nn::scale(nn::mean(surr), -1.0);
  out.value = nn::mean(nn::square(nn::sub(value, t.constant(ret))));
  out.entropy = nn::mean(entropy);
  out.loss = nn::add(nn::add(out.policy, nn::scale(out.value, cfg.value_coef)), nn::scale(out.entropy, -cfg.entropy_coef));
  return out;
}

GaeResult gae_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                         const std::vector<bool>& dones, double last_value, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (n == 0) throw std::invalid_argument("gae_advantages: empty buffer");
  if (values.size() != n || dones.size() != n) throw std::invalid_argument("gae_advantages: length mismatch");
  GaeResult r;
  r.advantages.assign(n, 0.0);
  r.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double next_value = k + 1 < n ? values[k + 1] : last_value;
    const double keep = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * keep - values[k];
    running = delta + gamma * lambda * keep * running;
    r.advantages[k] = running;
    r.returns[k] = running + values[k];
  }
  return r;
}

void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(adv.size());
  for (double& a : adv) a -= mean;
  if (adv.size() < 2) return;
  double var = 0.0;
  for (double a : adv) var += a * a;
  const double sd = std::sqrt(var / static_cast<double>(adv.size()));
  for (double& a : adv) a /= (sd + 1e-8);
}

Matrix adjacency_target(const AttributedGraph& g) {
  const int n = g.num_nodes();
  Matrix a = Matrix::Identity(n, n);
  for (const auto& e : g.edges) {
    a(e.src, e.dst) = 1.0;
    a(e.dst, e.src) = 1.0;
  }
  return a;
}

// ---------------------------------------------------------------- agent

GacdAgent::GacdAgent(AgentConfig cfg) : cfg_(cfg) {
  if (cfg_.width <= 0 || cfg_.latent_dim <= 0 || cfg_.layers <= 0) throw std::invalid_argument("agent: bad widths");
  Rng rng(mix_seed(cfg_.seed, 0xA6E7));
  const int w = cfg_.width, d = cfg_.latent_dim;
  if (cfg_.variant == Variant::M1) {
    embed_ = nn::Mlp(store_, "enc.embed", {kFeatureDim, w, w}, cfg_.activation, rng);
    for (int l = 0; l < cfg_.layers; ++l)
      mp_.emplace_back(store_, "enc.mp" + std::to_string(l), w, w, cfg_.gated, cfg_.activation, rng);
  } else {
    in_proj_ = nn::Linear(store_, "enc.in", kFeatureDim, w, rng);
    Matrix table(cfg_.max_degree + 1, w);
    for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = 0.1 * rng.normal();
    degree_table_ = store_.add("enc.degree", table);
    for (int l = 0; l < cfg_.layers; ++l)
      gt_.emplace_back(store_, "enc.gt" + std::to_string(l), w, cfg_.heads, cfg_.activation, rng);
    out_ln_ = nn::LayerNorm(store_, "enc.ln", w);
  }
  mu_ = nn::Linear(store_, "enc.mu", w, d, rng);
  if (cfg_.variant == Variant::M3) {
    logvar_ = nn::Linear(store_, "enc.logvar", w, d, rng);
    // Start near a deterministic, near-zero posterior so the untrained decoder sits at chance.
    store_.params()[static_cast<std::size_t>(mu_.w)].value *= 0.01;
    store_.params()[static_cast<std::size_t>(logvar_.w)].value.setZero();
    store_.params()[static_cast<std::size_t>(logvar_.b)].value.setConstant(-6.0);
    feat_dec_ = nn::Mlp(store_, "dec.feat", {d, w, kFeatureDim}, cfg_.activation, rng);
  }
  psi_ = ForwardMapNet(store_, "psi", d, cfg_.forward_map_hidden, rng);
  node_head_ = nn::Mlp(store_, "pol.node", {w + d, w}, cfg_.activation, rng);
  node_out_ = nn::Linear(store_, "pol.node.out", w, 1, rng, false);  // a bias cancels in the node softmax
  kind_head_ = nn::Mlp(store_, "pol.kind", {w + d, w, kActionKinds}, cfg_.activation, rng);
  value_head_ = nn::Mlp(store_, "val", {d, w, 1}, cfg_.activation, rng);
}

GraphInput GacdAgent::prepare(const std::vector<const AttributedGraph*>& graphs) const {
  return make_graph_input(graphs, cfg_.max_degree, uses_transformer());
}

Encoding GacdAgent::encode(Tape& t, const GraphInput& in) {
  if (frozen_) {
    // Frozen weights: evaluate off-tape and hand the results over as constants.
    Tape scratch;
    frozen_ = false;
    Encoding e = encode(scratch, in);
    frozen_ = true;
    Encoding out;
    out.node = t.constant(e.node.value());
    out.mu = t.constant(e.mu.value());
    if (e.logvar.tape) out.logvar = t.constant(e.logvar.value());
    out.z = t.constant(e.z.value());
    return out;
  }
  Var x = t.constant(in.features);
  Var h;
  if (cfg_.variant == Variant::M1) {
    h = nn::activate(embed_(t, store_, x), cfg_.activation);
    for (const auto& layer : mp_) h = layer(t, store_, h, in.edges);
  } else {
    h = nn::add(in_proj_(t, store_, x), nn::gather_rows(t.param(store_, degree_table_), in.degree_bucket));
    for (const auto& layer : gt_) h = layer(t, store_, h, in.batch.offsets, in.spd_buckets);
    h = out_ln_(t, store_, h);
  }
  Encoding e;
  e.node = h;
  e.mu = mu_(t, store_, h);
  if (cfg_.variant == Variant::M3) e.logvar = logvar_(t, store_, h);
  e.z = nn::segment_mean(e.mu, in.batch.offsets);
  return e;
}

Var GacdAgent::heads_input(Tape& t, const GraphInput& in, Var node, Var u) const {
  (void)t;
  return nn::concat_cols({node, nn::gather_rows(u, in.graph_of)});
}

PolicyOutput GacdAgent::forward(Tape& t, const GraphInput& in) {
  PolicyOutput out;
  out.enc = encode(t, in);
  out.u = cfg_.use_ot ? psi_(t, store_, out.enc.z) : out.enc.z;
  Var hin = heads_input(t, in, out.enc.node, out.u);
  Var node_logits = node_out_(t, store_, nn::activate(node_head_(t, store_, hin), cfg_.activation));
  out.node_logp = nn::segment_log_softmax(node_logits, in.batch.offsets, in.host_mask);
  out.kind_logp = nn::row_log_softmax(kind_head_(t, store_, hin), in.kind_mask);
  out.value = value_head_(t, store_, out.u);

  const int n = in.num_nodes();
  Matrix host(n, 1);
  for (int i = 0; i < n; ++i) host(i, 0) = in.host_mask[static_cast<std::size_t>(i)];
  Var p = nn::mul_col(nn::exp(out.node_logp), t.constant(host));
  Var q = nn::mul(nn::exp(out.kind_logp), t.constant(in.kind_mask));
  Var kind_entropy = nn::scale(nn::row_sum(nn::mul(q, out.kind_logp)), -1.0);
  Var per_node = nn::mul(p, nn::sub(kind_entropy, out.node_logp));
  std::vector<int> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);
  out.entropy = nn::scatter_add(per_node, rows, in.graph_of, std::vector<double>(static_cast<std::size_t>(n), 1.0),
                                in.num_graphs());
  return out;
}

std::vector<Decision> GacdAgent::act(const std::vector<const AttributedGraph*>& graphs, Rng* rng) {
  const GraphInput in = prepare(graphs);
  Tape t;
  const PolicyOutput out = forward(t, in);
  const Matrix nl = out.node_logp.value();
  const Matrix kl = out.kind_logp.value();
  const Matrix v = out.value.value();
  std::vector<Decision> res;
  for (int g = 0; g < in.num_graphs(); ++g) {
    const int lo = in.batch.offsets[static_cast<std::size_t>(g)], hi = in.batch.offsets[static_cast<std::size_t>(g) + 1];
    int node = -1, kind = -1;
    if (rng) {
      std::vector<double> pn;
      for (int i = lo; i < hi; ++i) pn.push_back(in.host_mask[static_cast<std::size_t>(i)] ? std::exp(nl(i, 0)) : 0.0);
      node = lo + static_cast<int>(rng->categorical(pn));
      std::vector<double> pk;
      for (int k = 0; k < kActionKinds; ++k) pk.push_back(in.kind_mask(node, k) != 0.0 ? std::exp(kl(node, k)) : 0.0);
      kind = static_cast<int>(rng->categorical(pk));
    } else {
      double best = -std::numeric_limits<double>::infinity();
      for (int i = lo; i < hi; ++i) {
        if (!in.host_mask[static_cast<std::size_t>(i)]) continue;
        for (int k = 0; k < kActionKinds; ++k) {
          if (in.kind_mask(i, k) == 0.0) continue;
          const double s = nl(i, 0) + kl(i, k);
          bool take = node < 0 || s > best + 1e-9;
          if (!take && s >= best - 1e-9) {
            const auto& a = in.batch.nodes[static_cast<std::size_t>(i)].label;
            const auto& b = in.batch.nodes[static_cast<std::size_t>(node)].label;
            take = a < b || (a == b && k < kind);
          }
          if (take) {
            best = node < 0 ? s : std::max(best, s);
            node = i;
            kind = k;
          }
        }
      }
    }
    Decision dcs;
    dcs.node = node - lo;
    dcs.kind = kind;
    dcs.logp = nl(node, 0) + kl(node, kind);
    dcs.value = v(g, 0);
    dcs.action.kind = blue_kind_of(kind);
    dcs.action.target = dcs.action.kind == BlueKind::Sleep ? -1 : in.batch.nodes[static_cast<std::size_t>(node)].ref;
    res.push_back(dcs);
  }
  return res;
}

Decision GacdAgent::act(const AttributedGraph& g, Rng* rng) { return act(std::vector<const AttributedGraph*>{&g}, rng).front(); }

std::vector<double> GacdAgent::node_distribution(const AttributedGraph& g) {
  const GraphInput in = prepare({&g});
  Tape t;
  const PolicyOutput out = forward(t, in);
  std::vector<double> p(static_cast<std::size_t>(in.num_nodes()), 0.0);
  for (int i = 0; i < in.num_nodes(); ++i)
    if (in.host_mask[static_cast<std::size_t>(i)]) p[static_cast<std::size_t>(i)] = std::exp(out.node_logp.value()(i, 0));
  return p;
}

Eigen::MatrixXd GacdAgent::kind_distribution(const AttributedGraph& g) {
  const GraphInput in = prepare({&g});
  Tape t;
  const PolicyOutput out = forward(t, in);
  Eigen::MatrixXd q = out.kind_logp.value().array().exp();
  return q.cwiseProduct(Eigen::MatrixXd(in.kind_mask));
}

Eigen::MatrixXd GacdAgent::codes(const std::vector<const AttributedGraph*>& graphs) {
  const GraphInput in = prepare(graphs);
  Tape t;
  return encode(t, in).z.value();
}

Var GacdAgent::chosen_logp(const PolicyOutput& out, const std::vector<int>& nodes, const std::vector<int>& kinds) const {
  if (nodes.size() != kinds.size()) throw std::invalid_argument("chosen_logp: size mismatch");
  std::vector<std::pair<int, int>> ni, ki;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    ni.push_back({nodes[i], 0});
    ki.push_back({nodes[i], kinds[i]});
  }
  return nn::add(nn::gather_elems(out.node_logp, ni), nn::gather_elems(out.kind_logp, ki));
}

Var GacdAgent::mse_loss(Tape& t) {
  if (!ot_.ready) throw std::logic_error("mse_loss: no SDOT map fitted");
  return forward_map_loss(t, store_, psi_, ot_.map.codes.z, ot_.stats.centroids);
}

Var GacdAgent::fgw_loss(Tape& t, const std::vector<int>& sample_ids) {
  if (!ot_.ready) throw std::logic_error("fgw_loss: no SDOT map fitted");
  if (sample_ids.empty()) throw std::invalid_argument("fgw_loss: no samples");
  std::vector<int> cells;
  std::vector<int> slot;
  std::vector<const AttributedGraph*> graphs;
  std::vector<int> where(static_cast<std::size_t>(ot_.map.codes.size()), -1);
  Matrix x(static_cast<Eigen::Index>(sample_ids.size()), cfg_.latent_dim);
  for (std::size_t i = 0; i < sample_ids.size(); ++i) {
    const int s = sample_ids[i];
    const int c = ot_.stats.cell.at(static_cast<std::size_t>(s));
    if (where[static_cast<std::size_t>(c)] < 0) {
      where[static_cast<std::size_t>(c)] = static_cast<int>(graphs.size());
      graphs.push_back(&ot_.code_graphs[static_cast<std::size_t>(c)]);
    }
    slot.push_back(where[static_cast<std::size_t>(c)]);
    x.row(static_cast<Eigen::Index>(i)) = ot_.stats.samples.row(s);
  }
  const GraphInput in = prepare(graphs);
  const Encoding e = encode(t, in);
  Var z = nn::gather_rows(e.z, slot);
  return nn::mean(nn::row_sum(nn::square(nn::sub(t.constant(x), z))));
}

AeTerms GacdAgent::ae_loss(Tape& t, const GraphInput& in, const Encoding& enc, std::uint64_t noise_seed) {
  if (cfg_.variant != Variant::M3 || !enc.logvar.tape) throw std::logic_error("ae_loss: variational encoder required");
  Rng rng(noise_seed);
  const int n = in.num_nodes(), d = cfg_.latent_dim;
  Matrix eps(n, d);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
  Var zs = nn::add(enc.mu, nn::mul(nn::exp(nn::scale(enc.logvar, 0.5)), t.constant(eps)));

  Var bce_sum;
  double slots = 0.0;
  for (int g = 0; g < in.num_graphs(); ++g) {
    const int lo = in.batch.offsets[static_cast<std::size_t>(g)], hi = in.batch.offsets[static_cast<std::size_t>(g) + 1];
    std::vector<int> rows(static_cast<std::size_t>(hi - lo));
    std::iota(rows.begin(), rows.end(), lo);
    Var zg = nn::gather_rows(zs, rows);
    const Matrix target = adjacency_target(in.batch.unbatch(g));
    Var s = nn::sum(nn::bce_with_logits(nn::matmul(zg, nn::transpose(zg)), target));
    bce_sum = bce_sum.tape ? nn::add(bce_sum, s) : s;
    slots += static_cast<double>(target.size());
  }
  AeTerms out;
  out.bce = nn::scale(bce_sum, 1.0 / slots);
  Var xhat = nn::sigmoid(feat_dec_(t, store_, zs));
  out.features = nn::mean(nn::square(nn::sub(xhat, t.constant(in.features))));
  Var kl_inner = nn::sub(nn::sub(nn::add_scalar(enc.logvar, 1.0), nn::square(enc.mu)), nn::exp(enc.logvar));
  // Per-node KL summed over latent dims, averaged over nodes and scaled by 1/(nodes per graph).
  const double per_graph = static_cast<double>(n) / in.num_graphs();
  out.kl = nn::scale(nn::sum(kl_inner), -0.5 / (static_cast<double>(n) * per_graph));
  out.total = nn::add(nn::add(out.bce, out.features), nn::scale(out.kl, cfg_.kl_weight));
  return out;
}

bool GacdAgent::refit_ot(const std::vector<const AttributedGraph*>& graphs, std::uint64_t seed) {
  // Most recent unique observations, newest last.
  std::vector<const AttributedGraph*> uniq;
  for (auto it = graphs.rbegin(); it != graphs.rend() && static_cast<int>(uniq.size()) < cfg_.sdot_codes; ++it) {
    if (std::none_of(uniq.begin(), uniq.end(), [&](const AttributedGraph* g) { return *g == **it; })) uniq.push_back(*it);
  }
  if (uniq.empty()) return false;
  std::reverse(uniq.begin(), uniq.end());
  const Eigen::MatrixXd z = codes(uniq);
  // Near-coincident codes make the transport cells degenerate; treat them as one code.
  const double extent = (z.colwise().maxCoeff() - z.colwise().minCoeff()).norm();
  const LatentCodes lc = make_codes(z, {}, std::max(1e-12, 1e-3 * extent));
  std::vector<AttributedGraph> code_graphs;
  for (int c = 0; c < lc.size(); ++c) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const double dist = (z.row(r) - lc.z.row(c)).norm();
      if (dist < bd) {
        bd = dist;
        best = static_cast<int>(r);
      }
    }
    code_graphs.push_back(*uniq[static_cast<std::size_t>(best)]);
  }
  SdotOptions opt;
  opt.mc_samples = std::max(cfg_.sdot_mc_samples, 10 * lc.size());
  opt.target_error = std::min(0.002, 0.25 / lc.size());
  opt.seed = seed;
  try {
    SdotMap m = fit_sdot(lc, CostKind::SquaredEuclidean, opt);
    ot_.stats = cell_statistics(m, opt.mc_samples, mix_seed(seed, 1));
    ot_.map = std::move(m);
  } catch (const std::runtime_error& e) {
    ot_.failures++;
    ot_.last_error = e.what();
    return false;
  }
  ot_.code_graphs = std::move(code_graphs);
  ot_.ready = true;
  ot_.fits++;
  return true;
}

UpdateStats GacdAgent::update(const std::vector<std::vector<RolloutStep>>& segments,
                              const std::vector<double>& last_values, Rng& rng) {
  if (segments.size() != last_values.size()) throw std::invalid_argument("update: segment count mismatch");
  for (const auto& seg : segments)
    for (const auto& s : seg) recent_.push_back(s.graph);
  if (static_cast<int>(recent_.size()) > cfg_.sdot_codes)
    recent_.erase(recent_.begin(), recent_.end() - cfg_.sdot_codes);
  if (cfg_.use_ot && cfg_.sdot_refit_every > 0 && updates_ % cfg_.sdot_refit_every == 0) {
    std::vector<const AttributedGraph*> ptrs;
    for (const auto& g : recent_) ptrs.push_back(&g);
    refit_ot(ptrs, mix_seed(cfg_.seed, 1000 + static_cast<std::uint64_t>(updates_)));
  }

  std::vector<const RolloutStep*> flat;
  std::vector<double> adv, ret;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    if (seg.empty()) continue;
    std::vector<double> r, v;
    std::vector<bool> d;
    for (const auto& st : seg) {
      r.push_back(st.reward);
      v.push_back(st.value);
      d.push_back(st.done);
      flat.push_back(&st);
    }
    const GaeResult g = gae_advantages(r, v, d, last_values[s], cfg_.ppo.gamma, cfg_.ppo.lambda);
    adv.insert(adv.end(), g.advantages.begin(), g.advantages.end());
    ret.insert(ret.end(), g.returns.begin(), g.returns.end());
  }
  if (flat.empty()) throw std::invalid_argument("update: empty rollout");
  normalize_advantages(adv);

  nn::AdamConfig adam;
  adam.lr = cfg_.ppo.lr;
  UpdateStats stats;
  std::vector<int> order(flat.size());
  std::iota(order.begin(), order.end(), 0);
  const bool ot_terms = cfg_.use_ot && ot_.ready;
  for (int epoch = 0; epoch < cfg_.ppo.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.ppo.minibatch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.ppo.minibatch));
      std::vector<const AttributedGraph*> graphs;
      std::vector<double> old, a, r;
      for (std::size_t k = start; k < end; ++k) {
        const RolloutStep* st = flat[static_cast<std::size_t>(order[k])];
        graphs.push_back(&st->graph);
        old.push_back(st->logp);
        a.push_back(adv[static_cast<std::size_t>(order[k])]);
        r.push_back(ret[static_cast<std::size_t>(order[k])]);
      }
      const GraphInput in = prepare(graphs);
      std::vector<int> nodes, kinds;
      for (std::size_t k = start; k < end; ++k) {
        const RolloutStep* st = flat[static_cast<std::size_t>(order[k])];
        nodes.push_back(in.batch.offsets[k - start] + st->node);
        kinds.push_back(st->kind);
      }
      store_.zero_grad();
      Tape t;
      const PolicyOutput out = forward(t, in);
      const PpoTerms ppo = ppo_objective(t, chosen_logp(out, nodes, kinds), out.entropy, out.value, old, a, r, cfg_.ppo);
      Var total = nn::scale(ppo.loss, cfg_.w_ppo);
      if (ot_terms) {
        Var mse = mse_loss(t);
        total = nn::add(total, nn::scale(mse, cfg_.w_mse));
        stats.l_mse += mse.scalar();
        if (cfg_.w_fgw > 0.0 && !frozen_) {
          std::vector<int> ids;
          const int ns = static_cast<int>(ot_.stats.samples.rows());
          for (int i = 0; i < cfg_.fgw_samples; ++i) ids.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(ns))));
          Var fgw = fgw_loss(t, ids);
          total = nn::add(total, nn::scale(fgw, cfg_.w_fgw));
          stats.l_fgw += fgw.scalar();
        }
      }
      t.backward(total);
      store_.clip_grad_norm(cfg_.ppo.max_grad_norm);
      store_.adam_step(adam);
      stats.l_ppo += ppo.loss.scalar();
      stats.entropy += ppo.entropy.scalar();
      stats.minibatches++;
    }
  }
  if (stats.minibatches > 0) {
    const double m = stats.minibatches;
    stats.l_ppo /= m;
    stats.l_mse /= m;
    stats.l_fgw /= m;
    stats.entropy /= m;
  }
  updates_++;
  return stats;
}

std::vector<double> GacdAgent::pretrain(const std::vector<AttributedGraph>& corpus, int steps, int batch_size, Rng& rng) {
  if (cfg_.variant != Variant::M3) throw std::logic_error("pretrain: only the M3 variant has a decoder");
  if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
  std::vector<const AttributedGraph*> all;
  for (const auto& g : corpus) all.push_back(&g);
  nn::AdamConfig adam;
  adam.lr = cfg_.pretrain_lr;
  std::vector<double> history;
  const int refit_every = std::max(1, steps / 4);
  for (int step = 0; step < steps; ++step) {
    if (cfg_.use_ot && step > 0 && step % refit_every == 0) refit_ot(all, mix_seed(cfg_.seed, 500 + static_cast<std::uint64_t>(step)));
    std::vector<const AttributedGraph*> graphs;
    for (int b = 0; b < batch_size; ++b) graphs.push_back(all[rng.index(all.size())]);
    const GraphInput in = prepare(graphs);
    store_.zero_grad();
    Tape t;
    const Encoding enc = encode(t, in);
    const AeTerms ae = ae_loss(t, in, enc, rng.next_u64());
    Var total = nn::scale(ae.total, cfg_.w_ae);
    if (cfg_.use_ot && ot_.ready) {
      total = nn::add(total, nn::scale(mse_loss(t), cfg_.w_mse));
      std::vector<int> ids;
      const int ns = static_cast<int>(ot_.stats.samples.rows());
      for (int i = 0; i < cfg_.fgw_samples; ++i) ids.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(ns))));
      total = nn::add(total, nn::scale(fgw_loss(t, ids), cfg_.w_fgw));
    }
    t.backward(total);
    store_.clip_grad_norm(5.0);
    store_.adam_step(adam);
    history.push_back(ae.bce.scalar());
  }
  freeze_encoder();
  if (cfg_.use_ot) refit_ot(all, mix_seed(cfg_.seed, 999));
  return history;
}

void GacdAgent::freeze_encoder() {
  store_.set_frozen("enc.", true);
  store_.set_frozen("dec.", true);
  frozen_ = true;
}

void GacdAgent::save(const std::string& path) const {
  nn::write_checkpoint(path, nn::to_records(store_));
  nlohmann::json meta;
  meta["agent"] = cfg_;
  meta["frozen"] = frozen_;
  meta["updates"] = updates_;
  std::ofstream f(path + ".json");
  if (!f) throw std::runtime_error("cannot write " + path + ".json");
  f << meta.dump(2) << "\n";
}

GacdAgent GacdAgent::load(const std::string& path) {
  std::ifstream f(path + ".json");
  if (!f) throw std::runtime_error("missing agent metadata " + path + ".json");
  const nlohmann::json meta = nlohmann::json::parse(f);
  GacdAgent agent(meta.at("agent").get<AgentConfig>());
  nn::load_records(agent.store_, nn::read_checkpoint(path));
  if (meta.value("frozen", false)) agent.freeze_encoder();
  agent.updates_ = meta.value("updates", 0);
  return agent;
}

}  // namespace gacd

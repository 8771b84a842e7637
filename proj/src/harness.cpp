#include "gacd/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#ifndef GACD_CODE_VERSION
#define GACD_CODE_VERSION "unknown"
#endif

namespace gacd {

namespace fs = std::filesystem;
using nn::Matrix;
using nn::Tape;
using nn::Var;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  return f;
}

}  // namespace

std::string to_string(RedMode m) {
  switch (m) {
    case RedMode::BLine: return "bline";
    case RedMode::Meander: return "meander";
    case RedMode::Mixed: return "mixed";
  }
  return "?";
}

RedMode red_mode_from_string(const std::string& s) {
  if (s == "bline" || s == "BLine") return RedMode::BLine;
  if (s == "meander" || s == "Meander") return RedMode::Meander;
  if (s == "mixed") return RedMode::Mixed;
  throw std::invalid_argument("unknown red mode '" + s + "'");
}

void to_json(nlohmann::json& j, const SimConfig& c) {
  j = nlohmann::json{{"exploit_success", c.exploit_success},
                     {"exploit_detect", c.exploit_detect},
                     {"p_green", c.p_green},
                     {"max_steps", c.max_steps},
                     {"failure_penalty", c.failure_penalty},
                     {"red_enabled", c.red_enabled},
                     {"reward",
                      {{"user_compromised_host", c.reward.user_compromised_host},
                       {"privileged_enterprise_server", c.reward.privileged_enterprise_server},
                       {"impact", c.reward.impact},
                       {"restore", c.reward.restore},
                       {"deploy_decoy", c.reward.deploy_decoy}}}};
}

void from_json(const nlohmann::json& j, SimConfig& c) {
  SimConfig d;
  c.exploit_success = j.value("exploit_success", d.exploit_success);
  c.exploit_detect = j.value("exploit_detect", d.exploit_detect);
  c.p_green = j.value("p_green", d.p_green);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.failure_penalty = j.value("failure_penalty", d.failure_penalty);
  c.red_enabled = j.value("red_enabled", d.red_enabled);
  if (j.contains("reward")) {
    const auto& r = j.at("reward");
    c.reward.user_compromised_host = r.value("user_compromised_host", d.reward.user_compromised_host);
    c.reward.privileged_enterprise_server = r.value("privileged_enterprise_server", d.reward.privileged_enterprise_server);
    c.reward.impact = r.value("impact", d.reward.impact);
    c.reward.restore = r.value("restore", d.reward.restore);
    c.reward.deploy_decoy = r.value("deploy_decoy", d.reward.deploy_decoy);
  }
}

void to_json(nlohmann::json& j, const FlatConfig& c) {
  AgentConfig tmp;
  tmp.ppo = c.ppo;
  j = nlohmann::json{{"hidden", c.hidden}, {"ppo", nlohmann::json(tmp)["ppo"]}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, FlatConfig& c) {
  FlatConfig d;
  c.hidden = j.value("hidden", d.hidden);
  c.seed = j.value("seed", d.seed);
  AgentConfig tmp = nlohmann::json{{"ppo", j.value("ppo", nlohmann::json::object())}}.get<AgentConfig>();
  c.ppo = tmp.ppo;
}

void TrainConfig::check() const {
  if (total_steps <= 0) throw std::invalid_argument("train config: total_steps must be positive");
  if (topologies < 1) throw std::invalid_argument("train config: topologies must be at least 1");
  if (envs < 1) throw std::invalid_argument("train config: envs must be at least 1");
  if (horizon < 1) throw std::invalid_argument("train config: horizon must be at least 1");
  if (sim.max_steps < 1) throw std::invalid_argument("train config: sim.max_steps must be at least 1");
  if (!include_reference || topologies > 1) {
    const auto v = psg.violations();
    if (!v.empty()) throw std::invalid_argument("train config: psg: " + v.front());
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"name", c.name},
                     {"learner", c.learner == LearnerKind::Gacd ? "gacd" : "flat"},
                     {"agent", c.agent},
                     {"flat", c.flat},
                     {"topologies", c.topologies},
                     {"include_reference", c.include_reference},
                     {"psg", nlohmann::json::parse(serialize_scenario_spec(c.psg))},
                     {"red", to_string(c.red)},
                     {"total_steps", c.total_steps},
                     {"envs", c.envs},
                     {"horizon", c.horizon},
                     {"reward_scale", c.reward_scale},
                     {"sim", c.sim},
                     {"pretrain_episodes", c.pretrain_episodes},
                     {"pretrain_episode_steps", c.pretrain_episode_steps},
                     {"pretrain_steps", c.pretrain_steps},
                     {"pretrain_batch", c.pretrain_batch},
                     {"seed", c.seed},
                     {"out_dir", c.out_dir}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.name = j.value("name", d.name);
  const std::string learner = j.value("learner", std::string("gacd"));
  if (learner != "gacd" && learner != "flat") throw std::invalid_argument("unknown learner '" + learner + "'");
  c.learner = learner == "gacd" ? LearnerKind::Gacd : LearnerKind::Flat;
  c.agent = j.value("agent", nlohmann::json::object()).get<AgentConfig>();
  c.flat = j.value("flat", nlohmann::json::object()).get<FlatConfig>();
  c.topologies = j.value("topologies", d.topologies);
  c.include_reference = j.value("include_reference", d.include_reference);
  c.psg = j.contains("psg") ? parse_scenario_spec(j.at("psg").dump()) : d.psg;
  c.red = red_mode_from_string(j.value("red", to_string(d.red)));
  c.total_steps = j.value("total_steps", d.total_steps);
  c.envs = j.value("envs", d.envs);
  c.horizon = j.value("horizon", d.horizon);
  c.reward_scale = j.value("reward_scale", d.reward_scale);
  c.sim = j.value("sim", nlohmann::json::object()).get<SimConfig>();
  c.pretrain_episodes = j.value("pretrain_episodes", d.pretrain_episodes);
  c.pretrain_episode_steps = j.value("pretrain_episode_steps", d.pretrain_episode_steps);
  c.pretrain_steps = j.value("pretrain_steps", d.pretrain_steps);
  c.pretrain_batch = j.value("pretrain_batch", d.pretrain_batch);
  c.seed = j.value("seed", d.seed);
  c.out_dir = j.value("out_dir", d.out_dir);
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path);
  TrainConfig c = nlohmann::json::parse(f).get<TrainConfig>();
  c.check();
  return c;
}

std::vector<Scenario> make_topologies(const TrainConfig& cfg) {
  std::vector<Scenario> out;
  if (cfg.include_reference) out.push_back(vanilla_cc2());
  for (int i = static_cast<int>(out.size()); i < cfg.topologies; ++i) {
    Rng rng(mix_seed(cfg.seed ^ cfg.psg.seed, 100 + static_cast<std::uint64_t>(i)));
    out.push_back(generate_scenario(cfg.psg, rng));
  }
  return out;
}

std::vector<Scenario> switch_targets(const TrainConfig& cfg, int count) {
  std::vector<Scenario> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(mix_seed(cfg.seed ^ cfg.psg.seed, 900000 + static_cast<std::uint64_t>(i)));
    out.push_back(generate_scenario(cfg.psg, rng));
  }
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string config_hash(const nlohmann::json& j) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(j.dump());
  return os.str();
}

std::string code_version() { return GACD_CODE_VERSION; }

// ---------------------------------------------------------------- flat baseline

FlatAgent::FlatAgent(int hosts, FlatConfig cfg) : hosts_(hosts), cfg_(cfg) {
  if (hosts < 1) throw std::invalid_argument("flat agent needs at least one host");
  Rng rng(mix_seed(cfg_.seed, 0xF1A7));
  pi_ = nn::Mlp(store_, "flat.pi", {4 * hosts, cfg_.hidden, cfg_.hidden, hosts * kActionKinds}, nn::Activation::Tanh, rng);
  v_ = nn::Mlp(store_, "flat.v", {4 * hosts, cfg_.hidden, cfg_.hidden, 1}, nn::Activation::Tanh, rng);
  // Small policy output layer: near-uniform initial policy.
  store_.params()[static_cast<std::size_t>(pi_.layers.back().w)].value *= 0.01;
}

FlatAgent::View FlatAgent::view(const AttributedGraph& g) const {
  View v;
  v.obs = Eigen::VectorXd::Zero(4 * hosts_);
  v.mask = Matrix::Ones(1, hosts_ * kActionKinds);
  v.host_of.assign(static_cast<std::size_t>(hosts_), -1);
  std::vector<int> decoys;
  for (const auto& n : g.nodes)
    if (n.kind == NodeKind::Decoy) decoys.push_back(n.ref);
  int slot = 0;
  for (int i = 0; i < g.num_nodes() && slot < hosts_; ++i) {
    const auto& n = g.nodes[static_cast<std::size_t>(i)];
    if (n.kind != NodeKind::Host) continue;
    for (int k = 0; k < 4; ++k) v.obs(4 * slot + k) = g.features[static_cast<std::size_t>(i)][static_cast<std::size_t>(3 + k)];
    v.host_of[static_cast<std::size_t>(slot)] = n.ref;
    if (std::find(decoys.begin(), decoys.end(), n.ref) != decoys.end())
      v.mask(0, slot * kActionKinds + static_cast<int>(BlueKind::DeployDecoy)) = 0.0;
    ++slot;
  }
  return v;
}

Var FlatAgent::logits(Tape& t, const Matrix& obs) { return pi_(t, store_, t.constant(obs)); }
Var FlatAgent::values(Tape& t, const Matrix& obs) { return v_(t, store_, t.constant(obs)); }

FlatAgent::Choice FlatAgent::act(const View& v, Rng* rng) {
  Tape t;
  const Matrix obs = v.obs.transpose();
  const Matrix lp = nn::row_log_softmax(logits(t, obs), v.mask).value();
  const double value = values(t, obs).scalar();
  int idx = -1;
  if (rng) {
    std::vector<double> p(static_cast<std::size_t>(lp.cols()));
    for (Eigen::Index k = 0; k < lp.cols(); ++k) p[static_cast<std::size_t>(k)] = v.mask(0, k) != 0.0 ? std::exp(lp(0, k)) : 0.0;
    idx = static_cast<int>(rng->categorical(p));
  } else {
    for (Eigen::Index k = 0; k < lp.cols(); ++k)
      if (v.mask(0, k) != 0.0 && (idx < 0 || lp(0, k) > lp(0, idx) + 1e-12)) idx = static_cast<int>(k);
  }
  Choice c;
  c.slot = idx / kActionKinds;
  c.kind = idx % kActionKinds;
  c.logp = lp(0, idx);
  c.value = value;
  const int host = v.host_of[static_cast<std::size_t>(c.slot)];
  const BlueKind kind = blue_kind_of(c.kind);
  // A slot without a host (smaller topology after a switch) acts as Sleep.
  c.action = (host < 0 || kind == BlueKind::Sleep) ? BlueAction{BlueKind::Sleep, -1} : BlueAction{kind, host};
  return c;
}

UpdateStats FlatAgent::update(const std::vector<std::vector<Step>>& segments, const std::vector<double>& last_values,
                              Rng& rng) {
  if (segments.size() != last_values.size()) throw std::invalid_argument("update: segment count mismatch");
  std::vector<const Step*> flat;
  std::vector<double> adv, ret;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (segments[s].empty()) continue;
    std::vector<double> r, v;
    std::vector<bool> d;
    for (const auto& st : segments[s]) {
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
  for (int epoch = 0; epoch < cfg_.ppo.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.ppo.minibatch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.ppo.minibatch));
      const auto b = static_cast<Eigen::Index>(end - start);
      Matrix obs(b, 4 * hosts_), mask(b, hosts_ * kActionKinds);
      std::vector<std::pair<int, int>> picks;
      std::vector<double> old, a, r;
      for (std::size_t k = start; k < end; ++k) {
        const Step* st = flat[static_cast<std::size_t>(order[k])];
        const auto row = static_cast<Eigen::Index>(k - start);
        obs.row(row) = st->view.obs.transpose();
        mask.row(row) = st->view.mask;
        picks.push_back({static_cast<int>(row), st->index});
        old.push_back(st->logp);
        a.push_back(adv[static_cast<std::size_t>(order[k])]);
        r.push_back(ret[static_cast<std::size_t>(order[k])]);
      }
      store_.zero_grad();
      Tape t;
      Var lp = nn::row_log_softmax(logits(t, obs), mask);
      Var p = nn::mul(nn::exp(lp), t.constant(mask));
      Var ent = nn::scale(nn::row_sum(nn::mul(p, lp)), -1.0);
      const PpoTerms terms = ppo_objective(t, nn::gather_elems(lp, picks), ent, values(t, obs), old, a, r, cfg_.ppo);
      t.backward(terms.loss);
      store_.clip_grad_norm(cfg_.ppo.max_grad_norm);
      store_.adam_step(adam);
      stats.l_ppo += terms.loss.scalar();
      stats.entropy += terms.entropy.scalar();
      stats.minibatches++;
    }
  }
  if (stats.minibatches > 0) {
    stats.l_ppo /= stats.minibatches;
    stats.entropy /= stats.minibatches;
  }
  return stats;
}

void FlatAgent::save(const std::string& path) const {
  nn::write_checkpoint(path, nn::to_records(store_));
  nlohmann::json meta{{"flat", cfg_}, {"hosts", hosts_}};
  auto f = open_out(path + ".json");
  f << meta.dump(2) << "\n";
}

FlatAgent FlatAgent::load(const std::string& path) {
  std::ifstream f(path + ".json");
  if (!f) throw std::runtime_error("missing flat-agent metadata " + path + ".json");
  const nlohmann::json meta = nlohmann::json::parse(f);
  if (!meta.contains("flat")) throw std::runtime_error(path + " is not a flat-agent checkpoint");
  FlatAgent a(meta.at("hosts").get<int>(), meta.at("flat").get<FlatConfig>());
  nn::load_records(a.store_, nn::read_checkpoint(path));
  return a;
}

// ---------------------------------------------------------------- training

namespace {

struct EnvSlot {
  std::unique_ptr<Environment> env;
  AttributedGraph graph;
  int topology = 0;
  RedKind red = RedKind::BLine;
  double ep_reward = 0.0;
  int ep_steps = 0;
};

RedKind pick_red(RedMode mode, Rng& rng) {
  switch (mode) {
    case RedMode::BLine: return RedKind::BLine;
    case RedMode::Meander: return RedKind::Meander;
    case RedMode::Mixed: return rng.bernoulli(0.5) ? RedKind::BLine : RedKind::Meander;
  }
  return RedKind::BLine;
}

void start_episode(EnvSlot& slot, const std::vector<Scenario>& topos, const TrainConfig& cfg, Rng& task_rng,
                   std::uint64_t episode_seed) {
  slot.topology = static_cast<int>(task_rng.index(topos.size()));
  slot.red = pick_red(cfg.red, task_rng);
  slot.env = std::make_unique<Environment>(topos[static_cast<std::size_t>(slot.topology)], slot.red, cfg.sim);
  slot.graph = observation_to_graph(slot.env->reset(episode_seed), slot.env->topology().scenario());
  slot.ep_reward = 0.0;
  slot.ep_steps = 0;
}

BlueAction random_valid_action(const Environment& env, Rng& rng) {
  const int n = env.topology().num_hosts();
  std::vector<BlueAction> valid;
  valid.reserve(static_cast<std::size_t>(n * kActionKinds));
  for (int h = 0; h < n; ++h)
    for (int k = 0; k < kActionKinds; ++k) {
      const BlueKind kind = blue_kind_of(k);
      const BlueAction a = kind == BlueKind::Sleep ? BlueAction{kind, -1} : BlueAction{kind, h};
      if (env.valid_action(a)) valid.push_back(a);
    }
  return valid[rng.index(valid.size())];
}

std::vector<AttributedGraph> pretrain_corpus(const std::vector<Scenario>& topos, const TrainConfig& cfg, Rng& rng) {
  std::vector<AttributedGraph> corpus;
  for (std::size_t t = 0; t < topos.size(); ++t) {
    for (int e = 0; e < cfg.pretrain_episodes; ++e) {
      Environment env(topos[t], pick_red(cfg.red, rng), cfg.sim);
      AttributedGraph g = observation_to_graph(env.reset(rng.next_u64()), topos[t]);
      for (int s = 0; s < cfg.pretrain_episode_steps && !env.done(); ++s) {
        corpus.push_back(g);
        g = observation_to_graph(env.step(random_valid_action(env, rng)).observation, topos[t]);
      }
    }
  }
  return corpus;
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  cfg.check();
  const auto t0 = std::chrono::steady_clock::now();
  ensure_dir(cfg.out_dir);
  const std::vector<Scenario> topos = make_topologies(cfg);
  TrainResult res;
  res.checkpoint = (fs::path(cfg.out_dir) / (cfg.name + ".ckpt")).string();
  res.metrics_csv = (fs::path(cfg.out_dir) / (cfg.name + "_metrics.csv")).string();
  auto metrics = open_out(res.metrics_csv);
  metrics << "update,steps,mean_ep_reward,L_ppo,L_mse,L_fgw,L_ae,entropy\n";
  auto episodes = open_out((fs::path(cfg.out_dir) / (cfg.name + "_episodes.csv")).string());
  episodes << "update,env,topology,red,reward,steps\n";

  Rng task_rng(mix_seed(cfg.seed, 1));
  Rng act_rng(mix_seed(cfg.seed, 2));
  Rng update_rng(mix_seed(cfg.seed, 3));
  std::uint64_t episode_counter = 0;

  std::unique_ptr<GacdAgent> gacd;
  std::unique_ptr<FlatAgent> flat;
  double l_ae = 0.0;
  if (cfg.learner == LearnerKind::Gacd) {
    AgentConfig a = cfg.agent;
    a.seed = mix_seed(cfg.seed, 4);
    gacd = std::make_unique<GacdAgent>(a);
    if (a.variant == Variant::M3) {
      Rng pre_rng(mix_seed(cfg.seed, 5));
      const auto corpus = pretrain_corpus(topos, cfg, pre_rng);
      const auto hist = gacd->pretrain(corpus, cfg.pretrain_steps, cfg.pretrain_batch, pre_rng);
      if (!hist.empty()) l_ae = hist.back();
    }
  } else {
    FlatConfig f = cfg.flat;
    f.seed = mix_seed(cfg.seed, 4);
    flat = std::make_unique<FlatAgent>(topos.front().hosts.size() > 0 ? static_cast<int>(topos.front().hosts.size()) : 1, f);
  }

  std::vector<EnvSlot> slots(static_cast<std::size_t>(cfg.envs));
  for (auto& s : slots) start_episode(s, topos, cfg, task_rng, mix_seed(cfg.seed, 1000000 + episode_counter++));

  while (res.steps < cfg.total_steps) {
    std::vector<std::vector<RolloutStep>> gsegs(slots.size());
    std::vector<std::vector<FlatAgent::Step>> fsegs(slots.size());
    std::vector<double> finished;
    for (int k = 0; k < cfg.horizon; ++k) {
      std::vector<Decision> dec;
      if (gacd) {
        std::vector<const AttributedGraph*> gs;
        for (const auto& s : slots) gs.push_back(&s.graph);
        dec = gacd->act(gs, &act_rng);
      }
      for (std::size_t e = 0; e < slots.size(); ++e) {
        EnvSlot& s = slots[e];
        BlueAction action;
        FlatAgent::Step fstep;
        if (gacd) {
          action = dec[e].action;
        } else {
          fstep.view = flat->view(s.graph);
          const auto c = flat->act(fstep.view, &act_rng);
          fstep.index = c.slot * kActionKinds + c.kind;
          fstep.logp = c.logp;
          fstep.value = c.value;
          action = c.action;
        }
        StepResult r;
        try {
          r = s.env->step(action);
        } catch (const std::exception& ex) {
          throw std::runtime_error("train: simulator failure on topology " + std::to_string(s.topology) + ": " + ex.what());
        }
        const bool done = r.truncated || r.terminated;
        const double reward = cfg.reward_scale * r.normalized_reward;
        if (gacd) {
          gsegs[e].push_back({s.graph, dec[e].node, dec[e].kind, dec[e].logp, dec[e].value, reward, done});
        } else {
          fstep.reward = reward;
          fstep.done = done;
          fsegs[e].push_back(std::move(fstep));
        }
        s.ep_reward += r.normalized_reward;
        s.ep_steps++;
        if (done) {
          episodes << res.updates << "," << e << "," << s.topology << "," << to_string(s.red) << "," << fmt(s.ep_reward) << ","
                   << s.ep_steps << "\n";
          finished.push_back(s.ep_reward);
          start_episode(s, topos, cfg, task_rng, mix_seed(cfg.seed, 1000000 + episode_counter++));
        } else {
          s.graph = observation_to_graph(r.observation, s.env->topology().scenario());
        }
      }
    }
    std::vector<double> last(slots.size(), 0.0);
    UpdateStats st;
    if (gacd) {
      std::vector<const AttributedGraph*> gs;
      for (const auto& s : slots) gs.push_back(&s.graph);
      const auto dec = gacd->act(gs, nullptr);
      for (std::size_t e = 0; e < slots.size(); ++e) last[e] = dec[e].value;
      st = gacd->update(gsegs, last, update_rng);
    } else {
      for (std::size_t e = 0; e < slots.size(); ++e) last[e] = flat->act(flat->view(slots[e].graph), nullptr).value;
      st = flat->update(fsegs, last, update_rng);
    }
    res.steps += static_cast<long>(slots.size()) * cfg.horizon;
    const double mean_ep = finished.empty()
                               ? std::nan("")
                               : std::accumulate(finished.begin(), finished.end(), 0.0) / static_cast<double>(finished.size());
    metrics << res.updates << "," << res.steps << "," << fmt(mean_ep) << "," << fmt(st.l_ppo) << "," << fmt(st.l_mse) << ","
            << fmt(st.l_fgw) << "," << fmt(l_ae) << "," << fmt(st.entropy) << "\n";
    res.updates++;
  }
  if (gacd) gacd->save(res.checkpoint);
  else flat->save(res.checkpoint);
  auto cfg_out = open_out((fs::path(cfg.out_dir) / (cfg.name + "_config.json")).string());
  cfg_out << nlohmann::json(cfg).dump(2) << "\n";
  res.seconds = seconds_since(t0);
  return res;
}

// ---------------------------------------------------------------- evaluation

Policy gacd_policy(std::shared_ptr<GacdAgent> agent) {
  return [agent](const StepView& v, Rng&) { return agent->act(v.graph, nullptr).action; };
}

Policy flat_policy(std::shared_ptr<FlatAgent> agent) {
  return [agent](const StepView& v, Rng&) { return agent->act(agent->view(v.graph), nullptr).action; };
}

Policy random_policy() {
  return [](const StepView& v, Rng& rng) { return random_valid_action(v.env, rng); };
}

Policy sleep_policy() {
  return [](const StepView&, Rng&) { return BlueAction{BlueKind::Sleep, -1}; };
}

std::vector<int> episode_permutation(const AttributedGraph& g, std::uint64_t episode_seed) {
  const int n = g.num_nodes();
  std::vector<std::pair<std::uint64_t, int>> keys;
  for (int i = 0; i < n; ++i) keys.push_back({mix_seed(episode_seed, fnv1a(g.nodes[static_cast<std::size_t>(i)].label)), i});
  std::sort(keys.begin(), keys.end());
  std::vector<int> sigma(static_cast<std::size_t>(n));
  for (int pos = 0; pos < n; ++pos) sigma[static_cast<std::size_t>(keys[static_cast<std::size_t>(pos)].second)] = pos;
  return sigma;
}

std::vector<EpisodeRecord> evaluate(const Policy& policy, const Scenario& scenario, const EvalOptions& opt,
                                    const std::string& condition) {
  if (opt.episodes < 1) throw std::invalid_argument("evaluate: episodes must be positive");
  if (opt.switch_step >= 0 && opt.switch_pool.empty()) throw std::invalid_argument("evaluate: switch needs targets");
  for (const auto& s : opt.switch_pool)
    if (s.hosts.empty()) throw std::invalid_argument("evaluate: switch target has no hosts");
  std::vector<EpisodeRecord> out;
  for (int e = 0; e < opt.episodes; ++e) {
    EpisodeRecord rec;
    rec.condition = condition;
    rec.episode = e;
    rec.seed = mix_seed(opt.seed, static_cast<std::uint64_t>(e));
    Environment env(scenario, opt.red, opt.sim);
    Rng prng(mix_seed(rec.seed, 7));
    AttributedGraph g = observation_to_graph(env.reset(rec.seed), scenario);
    int step = 0;
    while (!env.done()) {
      if (step == opt.switch_step) {
        const Scenario& next = opt.switch_pool[static_cast<std::size_t>(e) % opt.switch_pool.size()];
        g = observation_to_graph(env.switch_scenario(next), next);
      }
      const AttributedGraph shown = opt.randomize ? permute(g, episode_permutation(g, rec.seed)) : g;
      const BlueAction a = policy(StepView{env, shown}, prng);
      const bool valid = env.valid_action(a);
      const StepResult r = env.step(a);
      const bool post = opt.switch_step >= 0 && step >= opt.switch_step;
      rec.reward += r.normalized_reward;
      rec.step_rewards.push_back(r.normalized_reward);
      rec.invalid += valid ? 0 : 1;
      if (post) {
        rec.post_switch_reward += r.normalized_reward;
        rec.post_switch_steps++;
        rec.post_switch_invalid += valid ? 0 : 1;
      }
      ++step;
      g = observation_to_graph(r.observation, env.topology().scenario());
    }
    rec.steps = step;
    out.push_back(std::move(rec));
  }
  return out;
}

ConditionReport summarize(const std::string& condition, const std::vector<EpisodeRecord>& eps, double seconds) {
  ConditionReport r;
  r.condition = condition;
  r.seconds = seconds;
  double post = 0.0;
  long post_steps = 0;
  for (const auto& e : eps) {
    if (e.condition != condition) continue;
    r.mean += e.reward;
    r.episodes++;
    r.invalid += e.invalid;
    post += e.post_switch_reward;
    post_steps += e.post_switch_steps;
  }
  if (r.episodes == 0) throw std::invalid_argument("summarize: no episodes for " + condition);
  r.mean /= r.episodes;
  for (const auto& e : eps)
    if (e.condition == condition) r.std += (e.reward - r.mean) * (e.reward - r.mean);
  r.std = std::sqrt(r.std / r.episodes);
  r.post_switch_step_mean = post_steps > 0 ? post / static_cast<double>(post_steps) : 0.0;
  return r;
}

double pooled_std(const ConditionReport& a, const ConditionReport& b) {
  return std::sqrt(0.5 * (a.std * a.std + b.std * b.std));
}

void write_report_csv(const std::string& path, const std::vector<ConditionReport>& rows) {
  auto f = open_out(path);
  f << "condition,mean,std,episodes,seconds,post_switch_step_mean,invalid\n";
  for (const auto& r : rows)
    f << r.condition << "," << fmt(r.mean) << "," << fmt(r.std) << "," << r.episodes << "," << fmt(r.seconds) << ","
      << fmt(r.post_switch_step_mean) << "," << r.invalid << "\n";
}

void write_episodes_csv(const std::string& path, const std::vector<EpisodeRecord>& rows) {
  auto f = open_out(path);
  f << "condition,episode,seed,reward,steps,invalid,post_switch_reward,post_switch_steps,post_switch_invalid\n";
  for (const auto& r : rows)
    f << r.condition << "," << r.episode << "," << r.seed << "," << fmt(r.reward) << "," << r.steps << "," << r.invalid << ","
      << fmt(r.post_switch_reward) << "," << r.post_switch_steps << "," << r.post_switch_invalid << "\n";
}

std::vector<EpisodeRecord> read_episodes_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(f, line);
  std::vector<EpisodeRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    if (c.size() != 9) throw std::runtime_error("malformed episodes row: " + line);
    EpisodeRecord r;
    r.condition = c[0];
    r.episode = std::stoi(c[1]);
    r.seed = std::stoull(c[2]);
    r.reward = std::stod(c[3]);
    r.steps = std::stoi(c[4]);
    r.invalid = std::stoi(c[5]);
    r.post_switch_reward = std::stod(c[6]);
    r.post_switch_steps = std::stoi(c[7]);
    r.post_switch_invalid = std::stoi(c[8]);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------- experiments

void to_json(nlohmann::json& j, const ExperimentOptions& o) {
  std::vector<std::string> variants;
  for (Variant v : o.variants) variants.push_back(to_string(v));
  j = nlohmann::json{{"out_dir", o.out_dir},   {"train", o.train},         {"episodes", o.episodes},
                     {"counts", o.counts},     {"variants", variants},     {"switch_step", o.switch_step},
                     {"switch_pool", o.switch_pool}, {"gacd_ckpt", o.gacd_ckpt}, {"flat_ckpt", o.flat_ckpt}};
}

void write_experiment(const std::string& dir, const std::string& name, const ExperimentOptions& opt,
                      const ExperimentResult& r) {
  ensure_dir(dir);
  write_report_csv((fs::path(dir) / "report.csv").string(), r.rows);
  write_episodes_csv((fs::path(dir) / "episodes.csv").string(), r.episodes);
  const nlohmann::json cfg = opt;
  nlohmann::json meta{{"experiment", name},
                      {"seed", opt.train.seed},
                      {"config_hash", config_hash(cfg)},
                      {"code_version", code_version()},
                      {"config", cfg},
                      {"checks", r.extra}};
  auto f = open_out((fs::path(dir) / "config.json").string());
  f << meta.dump(2) << "\n";
}

namespace {

std::string models_dir(const ExperimentOptions& opt) { return (fs::path(opt.out_dir) / "models").string(); }

std::shared_ptr<GacdAgent> train_gacd(const ExperimentOptions& opt, TrainConfig c, const std::string& name) {
  c.learner = LearnerKind::Gacd;
  c.name = name;
  c.out_dir = models_dir(opt);
  const TrainResult r = train(c);
  return std::make_shared<GacdAgent>(GacdAgent::load(r.checkpoint));
}

std::shared_ptr<FlatAgent> train_flat(const ExperimentOptions& opt, TrainConfig c, const std::string& name) {
  c.learner = LearnerKind::Flat;
  c.name = name;
  c.out_dir = models_dir(opt);
  c.topologies = 1;
  c.include_reference = true;
  const TrainResult r = train(c);
  return std::make_shared<FlatAgent>(FlatAgent::load(r.checkpoint));
}

void add_condition(ExperimentResult& res, const Policy& p, const Scenario& s, const EvalOptions& eo, const std::string& name) {
  const auto t0 = std::chrono::steady_clock::now();
  auto eps = evaluate(p, s, eo, name);
  res.episodes.insert(res.episodes.end(), eps.begin(), eps.end());
  res.rows.push_back(summarize(name, eps, seconds_since(t0)));
}

const ConditionReport& row(const ExperimentResult& r, const std::string& name) {
  for (const auto& x : r.rows)
    if (x.condition == name) return x;
  throw std::logic_error("missing condition " + name);
}

EvalOptions eval_options(const ExperimentOptions& opt, RedKind red) {
  EvalOptions eo;
  eo.episodes = opt.episodes;
  eo.red = red;
  eo.seed = mix_seed(opt.train.seed, 77);
  eo.sim = opt.train.sim;
  return eo;
}

}  // namespace

ExperimentResult experiment_sweep(const ExperimentOptions& opt) {
  ExperimentResult res;
  const Scenario ref = vanilla_cc2();
  const EvalOptions eo = eval_options(opt, RedKind::BLine);
  for (Variant v : opt.variants) {
    for (int count : opt.counts) {
      TrainConfig c = opt.train;
      c.agent.variant = v;
      c.topologies = count;
      const std::string name = to_string(v) + "@" + std::to_string(count);
      auto agent = train_gacd(opt, c, to_string(v) + "_" + std::to_string(count));
      add_condition(res, gacd_policy(agent), ref, eo, name);
    }
  }
  for (Variant v : opt.variants) {
    if (opt.counts.size() < 2) break;
    const auto& lo = row(res, to_string(v) + "@" + std::to_string(opt.counts.front()));
    const auto& hi = row(res, to_string(v) + "@" + std::to_string(opt.counts.back()));
    res.extra[to_string(v)] = {{"low_mean", lo.mean},
                               {"high_mean", hi.mean},
                               {"pooled_std", pooled_std(lo, hi)},
                               {"trend_holds", hi.mean <= lo.mean + pooled_std(lo, hi)}};
  }
  return res;
}

ExperimentResult experiment_randomization(const ExperimentOptions& opt) {
  ExperimentResult res;
  const Scenario ref = vanilla_cc2();
  TrainConfig base = opt.train;
  base.topologies = 1;
  base.include_reference = true;
  base.red = RedMode::BLine;
  auto gacd = opt.gacd_ckpt.empty() ? train_gacd(opt, base, "gacd_reference")
                                    : std::make_shared<GacdAgent>(GacdAgent::load(opt.gacd_ckpt));
  auto flat = opt.flat_ckpt.empty() ? train_flat(opt, base, "flat_reference")
                                    : std::make_shared<FlatAgent>(FlatAgent::load(opt.flat_ckpt));
  EvalOptions eo = eval_options(opt, RedKind::BLine);
  add_condition(res, gacd_policy(gacd), ref, eo, "gacd");
  add_condition(res, flat_policy(flat), ref, eo, "flat");
  eo.randomize = true;
  add_condition(res, gacd_policy(gacd), ref, eo, "gacd+randomized");
  add_condition(res, flat_policy(flat), ref, eo, "flat+randomized");
  double worst = 0.0;
  const int n = opt.episodes;
  for (int e = 0; e < n; ++e) {
    const auto& a = res.episodes[static_cast<std::size_t>(e)];
    const auto& b = res.episodes[static_cast<std::size_t>(2 * n + e)];
    worst = std::max(worst, std::abs(a.reward - b.reward));
  }
  res.extra["gacd_max_episode_diff"] = worst;
  res.extra["flat_degrades"] = row(res, "flat+randomized").mean < row(res, "flat").mean;
  return res;
}

ExperimentResult experiment_switch(const ExperimentOptions& opt) {
  ExperimentResult res;
  const Scenario ref = vanilla_cc2();
  TrainConfig multi = opt.train;
  multi.topologies = std::max(1, opt.counts.empty() ? 4 : opt.counts.front());
  auto gacd = opt.gacd_ckpt.empty() ? train_gacd(opt, multi, "gacd_multi")
                                    : std::make_shared<GacdAgent>(GacdAgent::load(opt.gacd_ckpt));
  TrainConfig single = opt.train;
  single.red = RedMode::BLine;
  auto flat = opt.flat_ckpt.empty() ? train_flat(opt, single, "flat_reference")
                                    : std::make_shared<FlatAgent>(FlatAgent::load(opt.flat_ckpt));
  EvalOptions eo = eval_options(opt, RedKind::BLine);
  eo.switch_step = opt.switch_step;
  eo.switch_pool = switch_targets(opt.train, opt.switch_pool);
  add_condition(res, gacd_policy(gacd), ref, eo, "gacd+switch");
  add_condition(res, flat_policy(flat), ref, eo, "flat+switch");
  EvalOptions null_switch = eo;
  null_switch.switch_pool = {ref};
  add_condition(res, gacd_policy(gacd), ref, null_switch, "gacd+null-switch");
  EvalOptions none = eval_options(opt, RedKind::BLine);
  add_condition(res, gacd_policy(gacd), ref, none, "gacd");
  int post_invalid = 0;
  for (const auto& e : res.episodes)
    if (e.condition == "gacd+switch") post_invalid += e.post_switch_invalid;
  const auto& g = row(res, "gacd+switch");
  const auto& f = row(res, "flat+switch");
  const auto& nul = row(res, "gacd+null-switch");
  const auto& plain = row(res, "gacd");
  res.extra["gacd_post_switch_invalid"] = post_invalid;
  res.extra["gacd_post_switch_step_mean"] = g.post_switch_step_mean;
  res.extra["flat_post_switch_step_mean"] = f.post_switch_step_mean;
  res.extra["gacd_beats_flat"] = g.post_switch_step_mean > f.post_switch_step_mean;
  res.extra["null_switch_within_1sd"] = std::abs(nul.mean - plain.mean) <= pooled_std(nul, plain);
  return res;
}

ExperimentResult experiment_ot_ablation(const ExperimentOptions& opt) {
  ExperimentResult res;
  const Scenario ref = vanilla_cc2();
  const EvalOptions eo = eval_options(opt, RedKind::BLine);
  TrainConfig c = opt.train;
  c.agent.variant = Variant::M3;
  c.topologies = std::max(1, opt.counts.empty() ? 4 : opt.counts.front());
  c.agent.use_ot = true;
  add_condition(res, gacd_policy(train_gacd(opt, c, "M3_ot")), ref, eo, "M3+OT");
  c.agent.use_ot = false;
  add_condition(res, gacd_policy(train_gacd(opt, c, "M3_no_ot")), ref, eo, "M3-OT");
  const auto& on = row(res, "M3+OT");
  const auto& off = row(res, "M3-OT");
  res.extra["pooled_std"] = pooled_std(on, off);
  res.extra["ot_not_worse"] = on.mean >= off.mean - pooled_std(on, off);
  return res;
}

ExperimentResult experiment_cross_red(const ExperimentOptions& opt) {
  ExperimentResult res;
  const Scenario ref = vanilla_cc2();
  TrainConfig c = opt.train;
  c.topologies = 1;
  c.include_reference = true;
  for (RedMode trained : {RedMode::BLine, RedMode::Meander}) {
    c.red = trained;
    auto agent = train_gacd(opt, c, "gacd_" + to_string(trained));
    for (RedKind evald : {RedKind::BLine, RedKind::Meander}) {
      add_condition(res, gacd_policy(agent), ref, eval_options(opt, evald),
                    to_string(trained) + "->" + (evald == RedKind::BLine ? "bline" : "meander"));
    }
  }
  for (const std::string& t : {std::string("bline"), std::string("meander")}) {
    const std::string other = t == "bline" ? "meander" : "bline";
    const auto& same = row(res, t + "->" + t);
    const auto& cross = row(res, t + "->" + other);
    res.extra[t] = {{"same", same.mean}, {"cross", cross.mean},
                    {"within_order_of_magnitude", std::abs(cross.mean) <= 10.0 * std::max(std::abs(same.mean), 1e-9)}};
  }
  return res;
}

ExperimentResult run_experiment(const std::string& name, const ExperimentOptions& opt) {
  ExperimentResult r;
  if (name == "sweep") r = experiment_sweep(opt);
  else if (name == "randomization") r = experiment_randomization(opt);
  else if (name == "switch") r = experiment_switch(opt);
  else if (name == "ot-ablation") r = experiment_ot_ablation(opt);
  else if (name == "cross-red") r = experiment_cross_red(opt);
  else throw std::invalid_argument("unknown experiment '" + name + "'");
  write_experiment(opt.out_dir, name, opt, r);
  return r;
}

}  // namespace gacd

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "gacd/agent.hpp"
#include "test_util.hpp"

using namespace gacd;
using nn::Matrix;
using nn::Tape;
using nn::Var;

namespace {

constexpr double kFdTol = 1e-4;

AgentConfig small_config(Variant v, std::uint64_t seed = 1) {
  AgentConfig c;
  c.variant = v;
  c.width = 8;
  c.heads = 2;
  c.layers = 1;
  c.latent_dim = 4;
  c.forward_map_hidden = 8;
  c.sdot_mc_samples = 2000;
  c.fgw_samples = 8;
  c.ppo.minibatch = 16;
  c.ppo.epochs = 1;
  c.seed = seed;
  return c;
}

// Observation graphs from a short random-action episode on the reference network.
std::vector<AttributedGraph> episode_graphs(int steps, std::uint64_t seed) {
  const Scenario s = vanilla_cc2();
  Environment env(s, RedKind::BLine);
  Rng rng(seed);
  std::vector<AttributedGraph> out{observation_to_graph(env.reset(seed), s)};
  for (int k = 0; k < steps && !env.done(); ++k) {
    BlueAction a{BlueKind::Analyse, static_cast<int>(rng.index(static_cast<std::size_t>(env.topology().num_hosts())))};
    if (rng.bernoulli(0.3)) a = {BlueKind::DeployDecoy, a.target};
    if (!env.valid_action(a)) a = {BlueKind::Sleep, -1};
    out.push_back(observation_to_graph(env.step(a).observation, env.topology().scenario()));
  }
  return out;
}

// Random graph with at least one host node.
AttributedGraph random_host_graph(int n, Rng& rng) {
  AttributedGraph g = testutil::random_graph(n, rng);
  bool any = false;
  for (auto& node : g.nodes) any = any || node.kind == NodeKind::Host;
  if (!any) {
    g.nodes[0].kind = NodeKind::Host;
    g.features[0] = {0, 1, 0, 0, 0, 0, 0};
  }
  return g;
}

std::vector<std::vector<RolloutStep>> rollout(GacdAgent& agent, int envs, int steps, std::uint64_t seed,
                                              std::vector<double>& last_values) {
  const Scenario s = vanilla_cc2();
  Rng rng(seed);
  std::vector<std::vector<RolloutStep>> segs(static_cast<std::size_t>(envs));
  last_values.assign(static_cast<std::size_t>(envs), 0.0);
  for (int e = 0; e < envs; ++e) {
    Environment env(s, RedKind::BLine);
    AttributedGraph g = observation_to_graph(env.reset(mix_seed(seed, static_cast<std::uint64_t>(e))), s);
    for (int k = 0; k < steps; ++k) {
      const Decision d = agent.act(g, &rng);
      const StepResult r = env.step(d.action);
      RolloutStep st{g, d.node, d.kind, d.logp, d.value, 0.1 * r.normalized_reward, r.truncated || r.terminated};
      segs[static_cast<std::size_t>(e)].push_back(st);
      g = observation_to_graph(r.observation, env.topology().scenario());
    }
    last_values[static_cast<std::size_t>(e)] = agent.act(g, nullptr).value;
  }
  return segs;
}

std::vector<const AttributedGraph*> ptrs(const std::vector<AttributedGraph>& gs) {
  std::vector<const AttributedGraph*> p;
  for (const auto& g : gs) p.push_back(&g);
  return p;
}

}  // namespace

TEST_SUITE("agent") {
  TEST_CASE("GAE reduces to TD residuals and reward-to-go") {
    Rng rng(3);
    std::vector<double> r(10), v(10);
    for (int i = 0; i < 10; ++i) {
      r[static_cast<std::size_t>(i)] = rng.normal();
      v[static_cast<std::size_t>(i)] = rng.normal();
    }
    std::vector<bool> d(10, false);
    const double last = 0.7;
    const GaeResult td = gae_advantages(r, v, d, last, 0.9, 0.0);
    for (std::size_t k = 0; k < 10; ++k) {
      const double next = k + 1 < 10 ? v[k + 1] : last;
      CHECK(std::abs(td.advantages[k] - (r[k] + 0.9 * next - v[k])) < 1e-12);
    }
    const GaeResult mc = gae_advantages(r, std::vector<double>(10, 0.0), d, 0.0, 1.0, 1.0);
    for (std::size_t k = 0; k < 10; ++k) {
      double togo = 0.0;
      for (std::size_t j = k; j < 10; ++j) togo += r[j];
      CHECK(std::abs(mc.advantages[k] - togo) < 1e-12);
    }
  }

  TEST_CASE("GAE matches a direct sum with episode cuts") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 10;
      std::vector<double> r(n), v(n);
      std::vector<bool> d(n);
      for (std::size_t i = 0; i < n; ++i) {
        r[i] = rng.normal();
        v[i] = rng.normal();
        d[i] = rng.bernoulli(0.2);
      }
      const double last = rng.normal(), gamma = 0.99, lambda = 0.95;
      const GaeResult g = gae_advantages(r, v, d, last, gamma, lambda);
      for (std::size_t t = 0; t < n; ++t) {
        double sum = 0.0, w = 1.0;
        for (std::size_t l = t; l < n; ++l) {
          const double next = d[l] ? 0.0 : (l + 1 < n ? v[l + 1] : last);
          sum += w * (r[l] + gamma * next - v[l]);
          if (d[l]) break;
          w *= gamma * lambda;
        }
        CHECK(std::abs(g.advantages[t] - sum) < 1e-10);
        CHECK(std::abs(g.returns[t] - (sum + v[t])) < 1e-10);
      }
    }
    CHECK_THROWS(gae_advantages({}, {}, {}, 0.0, 0.99, 0.95));
  }

  TEST_CASE("advantage normalization") {
    std::vector<double> a{1.0, 2.0, 3.0, 6.0};
    normalize_advantages(a);
    double m = 0.0, s = 0.0;
    for (double x : a) m += x;
    for (double x : a) s += x * x;
    CHECK(std::abs(m) < 1e-12);
    CHECK(std::abs(s / 4.0 - 1.0) < 1e-6);
  }

  TEST_CASE("PPO clipped objective") {
    PpoConfig cfg;
    SUBCASE("unit ratio and zero advantage give a zero policy term") {
      Tape t;
      Var lp = t.constant(Matrix::Constant(3, 1, -1.2));
      const auto terms = ppo_objective(t, lp, t.constant(Matrix::Zero(3, 1)), t.constant(Matrix::Zero(3, 1)),
                                       {-1.2, -1.2, -1.2}, {0, 0, 0}, {0, 0, 0}, cfg);
      CHECK(terms.policy.scalar() == 0.0);
    }
    SUBCASE("ratio beyond the clip with positive advantage blocks the gradient") {
      nn::ParamStore store;
      const double old = -0.5;
      store.add("lp", Matrix::Constant(2, 1, old + std::log(1.0 + 2.0 * cfg.clip)));
      PpoConfig c = cfg;
      c.value_coef = 0.0;
      c.entropy_coef = 0.0;
      Tape t;
      const auto terms = ppo_objective(t, t.param(store, "lp"), t.constant(Matrix::Zero(2, 1)),
                                       t.constant(Matrix::Zero(2, 1)), {old, old}, {1.5, 0.3}, {0, 0}, c);
      t.backward(terms.loss);
      CHECK(store.at("lp").grad.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("random batch matches the formula") {
      Rng rng(5);
      const int b = 12;
      Matrix lp(b, 1), ent(b, 1), val(b, 1);
      std::vector<double> old(b), adv(b), ret(b);
      for (int i = 0; i < b; ++i) {
        lp(i, 0) = -rng.uniform(0.1, 3.0);
        ent(i, 0) = rng.uniform(0.0, 2.0);
        val(i, 0) = rng.normal();
        old[static_cast<std::size_t>(i)] = lp(i, 0) + 0.4 * rng.normal();
        adv[static_cast<std::size_t>(i)] = rng.normal();
        ret[static_cast<std::size_t>(i)] = rng.normal();
      }
      Tape t;
      const auto terms = ppo_objective(t, t.constant(lp), t.constant(ent), t.constant(val), old, adv, ret, cfg);
      double pol = 0.0, vl = 0.0, en = 0.0;
      for (int i = 0; i < b; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const double ratio = std::exp(lp(i, 0) - old[k]);
        const double clipped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        pol += -std::min(ratio * adv[k], clipped * adv[k]) / b;
        vl += (val(i, 0) - ret[k]) * (val(i, 0) - ret[k]) / b;
        en += ent(i, 0) / b;
      }
      CHECK(std::abs(terms.policy.scalar() - pol) < 1e-12);
      CHECK(std::abs(terms.value.scalar() - vl) < 1e-12);
      CHECK(std::abs(terms.loss.scalar() - (pol + cfg.value_coef * vl - cfg.entropy_coef * en)) < 1e-12);
    }
  }

  TEST_CASE("uniform heads give the uniform joint log-probability") {
    for (Variant v : {Variant::M1, Variant::M2, Variant::M3}) {
      GacdAgent agent(small_config(v));
      for (auto& p : agent.store().params())
        if (p.name.rfind("pol.", 0) == 0) p.value.setZero();
      const AttributedGraph g = episode_graphs(0, 1).front();
      const Decision d = agent.act(g, nullptr);
      CHECK(std::abs(d.logp - (-std::log(13.0) - std::log(5.0))) < 1e-12);
      const auto p = agent.node_distribution(g);
      double total = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        total += p[i];
        if (g.nodes[i].kind != NodeKind::Host) CHECK(p[i] == 0.0);
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
      // All ties: greedy picks the smallest host label with Sleep.
      CHECK(g.nodes[static_cast<std::size_t>(d.node)].label == "Defender");
      CHECK(d.kind == 0);
    }
  }

  TEST_CASE("greedy returns the joint argmax") {
    for (Variant v : {Variant::M1, Variant::M2}) {
      GacdAgent agent(small_config(v, 11));
      for (const auto& g : episode_graphs(20, 2)) {
        const auto pn = agent.node_distribution(g);
        const auto pk = agent.kind_distribution(g);
        double best = -1.0;
        for (int i = 0; i < g.num_nodes(); ++i)
          for (int k = 0; k < kActionKinds; ++k) best = std::max(best, pn[static_cast<std::size_t>(i)] * pk(i, k));
        const Decision d = agent.act(g, nullptr);
        CHECK(std::abs(std::exp(d.logp) - best) < 1e-12);
        CHECK(d.action.target == g.nodes[static_cast<std::size_t>(d.node)].ref);
      }
    }
  }

  TEST_CASE("decoy masking") {
    const auto graphs = episode_graphs(30, 7);
    GacdAgent agent(small_config(Variant::M1));
    int checked = 0;
    for (const auto& g : graphs) {
      const auto q = agent.kind_distribution(g);
      for (const auto& node : g.nodes) {
        if (node.kind != NodeKind::Decoy) continue;
        for (int i = 0; i < g.num_nodes(); ++i) {
          if (g.nodes[static_cast<std::size_t>(i)].kind == NodeKind::Host && g.nodes[static_cast<std::size_t>(i)].ref == node.ref) {
            CHECK(q(i, static_cast<int>(BlueKind::DeployDecoy)) == 0.0);
            CHECK(std::abs(q.row(i).sum() - 1.0) < 1e-12);
            ++checked;
          }
        }
      }
    }
    CHECK(checked > 0);
  }

  TEST_CASE("sampling follows the policy") {
    GacdAgent agent(small_config(Variant::M1, 3));
    const AttributedGraph g = episode_graphs(5, 3).back();
    const auto pn = agent.node_distribution(g);
    const auto pk = agent.kind_distribution(g);
    Rng rng(9);
    const int n = 20000;
    std::vector<double> freq(static_cast<std::size_t>(g.num_nodes()) * kActionKinds, 0.0);
    for (int s = 0; s < n; ++s) {
      const Decision d = agent.act(g, &rng);
      freq[static_cast<std::size_t>(d.node * kActionKinds + d.kind)] += 1.0 / n;
      CHECK(std::abs(d.logp - std::log(pn[static_cast<std::size_t>(d.node)] * pk(d.node, d.kind))) < 1e-9);
    }
    for (int i = 0; i < g.num_nodes(); ++i)
      for (int k = 0; k < kActionKinds; ++k) {
        const double p = pn[static_cast<std::size_t>(i)] * pk(i, k);
        CHECK(std::abs(freq[static_cast<std::size_t>(i * kActionKinds + k)] - p) < 4.0 * std::sqrt(p * (1 - p) / n) + 1e-12);
      }
  }

  TEST_CASE("node distribution is permutation equivariant") {
    Rng rng(21);
    for (Variant v : {Variant::M1, Variant::M2, Variant::M3}) {
      GacdAgent agent(small_config(v, 5));
      double worst = 0.0;
      const auto eps = episode_graphs(10, 8);
      for (int trial = 0; trial < 20; ++trial) {
        const AttributedGraph g = trial % 2 ? eps[static_cast<std::size_t>(trial / 2)] : random_host_graph(3 + static_cast<int>(rng.index(10)), rng);
        const auto sigma = testutil::random_permutation(g.num_nodes(), rng);
        const auto p = agent.node_distribution(g);
        const auto pp = agent.node_distribution(permute(g, sigma));
        for (std::size_t i = 0; i < p.size(); ++i)
          worst = std::max(worst, std::abs(p[i] - pp[static_cast<std::size_t>(sigma[i])]));
      }
      CHECK(worst < 1e-10);
    }
  }

  TEST_CASE("batched decisions equal single-graph decisions") {
    for (Variant v : {Variant::M1, Variant::M2}) {
      GacdAgent agent(small_config(v, 6));
      const auto gs = episode_graphs(6, 4);
      const auto batchd = agent.act(ptrs(gs), nullptr);
      for (std::size_t i = 0; i < gs.size(); ++i) {
        const Decision d = agent.act(gs[i], nullptr);
        CHECK(d.node == batchd[i].node);
        CHECK(d.kind == batchd[i].kind);
        CHECK(std::abs(d.logp - batchd[i].logp) < 1e-12);
        CHECK(std::abs(d.value - batchd[i].value) < 1e-12);
      }
      const Eigen::MatrixXd z = agent.codes({&gs[0], &gs[0], &gs[0]});
      CHECK((z.row(0) - z.row(2)).norm() < 1e-14);
    }
  }

  TEST_CASE("entropy equals the joint entropy") {
    GacdAgent agent(small_config(Variant::M2, 2));
    const AttributedGraph g = episode_graphs(4, 5).back();
    const auto pn = agent.node_distribution(g);
    const auto pk = agent.kind_distribution(g);
    double h = 0.0;
    for (int i = 0; i < g.num_nodes(); ++i)
      for (int k = 0; k < kActionKinds; ++k) {
        const double p = pn[static_cast<std::size_t>(i)] * pk(i, k);
        if (p > 0) h -= p * std::log(p);
      }
    const GraphInput in = agent.prepare({&g});
    Tape t;
    CHECK(std::abs(agent.forward(t, in).entropy.scalar() - h) < 1e-12);
  }

  TEST_CASE("loss gradients match finite differences") {
    const auto gs = episode_graphs(12, 6);
    const std::vector<const AttributedGraph*> micro{&gs[3], &gs[9]};
    for (Variant v : {Variant::M1, Variant::M2}) {
      CAPTURE(to_string(v));
      GacdAgent agent(small_config(v, 8));
      REQUIRE(agent.refit_ot(ptrs(gs), 3));
      const GraphInput in = agent.prepare(micro);
      std::vector<int> nodes, kinds;
      std::vector<double> old, adv{0.8, -0.5}, ret{0.3, -0.2};
      {
        Tape t;
        const PolicyOutput out = agent.forward(t, in);
        for (int g = 0; g < 2; ++g) {
          for (int i = in.batch.offsets[static_cast<std::size_t>(g)]; i < in.batch.offsets[static_cast<std::size_t>(g) + 1]; ++i)
            if (in.host_mask[static_cast<std::size_t>(i)]) {
              nodes.push_back(i);
              break;
            }
          kinds.push_back(1 + g);
        }
        const Matrix lp = agent.chosen_logp(out, nodes, kinds).value();
        old = {lp(0, 0) + 0.05, lp(1, 0) - 0.05};
      }
      const std::vector<int> ids{0, 5, 17, 40, 99, 250};
      auto ppo = [&](Tape& t, nn::ParamStore&) {
        const PolicyOutput out = agent.forward(t, in);
        return ppo_objective(t, agent.chosen_logp(out, nodes, kinds), out.entropy, out.value, old, adv, ret,
                             agent.config().ppo)
            .loss;
      };
      auto mse = [&](Tape& t, nn::ParamStore&) { return agent.mse_loss(t); };
      auto fgw = [&](Tape& t, nn::ParamStore&) { return agent.fgw_loss(t, ids); };
      auto composed = [&](Tape& t, nn::ParamStore& s) { return nn::add(nn::add(ppo(t, s), mse(t, s)), fgw(t, s)); };
      for (const auto& [name, f] : std::vector<std::pair<std::string, std::function<Var(Tape&, nn::ParamStore&)>>>{
               {"ppo", ppo}, {"mse", mse}, {"fgw", fgw}, {"composed", composed}}) {
        CAPTURE(name);
        const auto rep = nn::finite_difference_check(f, agent.store(), 1e-5, 1e-8, 6, 1);
        CAPTURE(rep.worst_param);
        CHECK(rep.checked > 0);
        CHECK(rep.max_rel_error < kFdTol);
      }
    }
  }

  TEST_CASE("autoencoder loss gradient matches finite differences") {
    GacdAgent agent(small_config(Variant::M3, 4));
    // Move away from the near-chance start so every term carries gradient.
    Rng rng(2);
    for (auto& p : agent.store().params())
      if (p.name.rfind("enc.", 0) == 0)
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += 0.2 * rng.normal();
    const auto gs = episode_graphs(6, 2);
    const GraphInput in = agent.prepare({&gs[2], &gs[5]});
    auto f = [&](Tape& t, nn::ParamStore&) { return agent.ae_loss(t, in, agent.encode(t, in), 77).total; };
    const auto rep = nn::finite_difference_check(f, agent.store(), 1e-5, 1e-8, 6, 2);
    CAPTURE(rep.worst_param);
    CHECK(rep.checked > 0);
    CHECK(rep.max_rel_error < kFdTol);
  }

  TEST_CASE("transport surrogate equals a direct loop") {
    GacdAgent agent(small_config(Variant::M1, 9));
    const auto gs = episode_graphs(30, 9);
    REQUIRE(agent.refit_ot(ptrs(gs), 4));
    const OtState& ot = agent.ot();
    std::vector<int> ids;
    for (int i = 0; i < 300; ++i) ids.push_back(i);
    Tape t;
    const double got = agent.fgw_loss(t, ids).scalar();
    double oracle = 0.0;
    for (int i : ids) {
      const Eigen::VectorXd x = ot.stats.samples.row(i).transpose();
      oracle += ot.map.cost(x, assign_cell(x, ot.map));
    }
    oracle /= static_cast<double>(ids.size());
    CHECK(std::abs(got - oracle) < 1e-10);
    CHECK(ot.map.codes.size() == static_cast<int>(ot.code_graphs.size()));
  }

  TEST_CASE("untrained decoder sits at chance") {
    GacdAgent agent(small_config(Variant::M3, 12));
    const auto gs = episode_graphs(3, 1);
    const GraphInput in = agent.prepare(ptrs(gs));
    Tape t;
    const AeTerms ae = agent.ae_loss(t, in, agent.encode(t, in), 5);
    CHECK(std::abs(ae.bce.scalar() - std::log(2.0)) < 0.02);
    CHECK_THROWS_AS(GacdAgent(small_config(Variant::M1)).ae_loss(t, in, agent.encode(t, in), 5), std::logic_error);
  }

  TEST_CASE("autoencoder reconstructs a tiny graph") {
    AttributedGraph g;
    const int n = 6;
    for (int i = 0; i < n; ++i) {
      const bool subnet = i < 2;
      g.nodes.push_back({subnet ? NodeKind::Subnet : NodeKind::Host, "v" + std::to_string(i), i});
      std::array<double, kFeatureDim> f{};
      f[subnet ? 0 : 1] = 1.0;
      f[static_cast<std::size_t>(3 + i % 4)] = 1.0;
      g.features.push_back(f);
    }
    for (auto [a, b] : std::vector<std::pair<int, int>>{{0, 2}, {0, 3}, {1, 4}, {1, 5}, {0, 1}}) {
      g.edges.push_back({a, b});
      g.edges.push_back({b, a});
    }
    AgentConfig cfg = small_config(Variant::M3, 13);
    cfg.width = 16;
    cfg.latent_dim = 8;
    cfg.pretrain_lr = 3e-3;
    GacdAgent agent(cfg);
    Rng rng(1);
    const auto hist = agent.pretrain({g}, 400, 1, rng);
    CHECK(hist.back() < hist.front());
    CHECK(agent.encoder_frozen());
    const GraphInput in = agent.prepare({&g});
    Tape t;
    const Matrix mu = agent.encode(t, in).mu.value();
    const Matrix target = adjacency_target(g);
    std::vector<double> pos, neg;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        (target(i, j) > 0 ? pos : neg).push_back(mu.row(i).dot(mu.row(j)));
      }
    double wins = 0.0;
    for (double p : pos)
      for (double q : neg) wins += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
    CHECK(wins / static_cast<double>(pos.size() * neg.size()) > 0.9);
  }

  TEST_CASE("frozen encoder stays bit-identical through updates") {
    AgentConfig cfg = small_config(Variant::M3, 14);
    GacdAgent agent(cfg);
    Rng rng(3);
    const auto corpus = episode_graphs(20, 3);
    agent.pretrain(corpus, 20, 4, rng);
    REQUIRE(agent.encoder_frozen());
    const std::uint64_t enc = agent.encoder_hash();
    const std::uint64_t heads = agent.store().hash("pol.");
    for (int u = 0; u < 10; ++u) {
      std::vector<double> last;
      const auto segs = rollout(agent, 2, 16, static_cast<std::uint64_t>(u), last);
      agent.update(segs, last, rng);
    }
    CHECK(agent.encoder_hash() == enc);
    CHECK(agent.store().hash("pol.") != heads);
    CHECK(agent.updates() == 10);
  }

  TEST_CASE("updates train the unfrozen variants") {
    for (Variant v : {Variant::M1, Variant::M2}) {
      AgentConfig cfg = small_config(v, 15);
      cfg.sdot_refit_every = 2;
      GacdAgent agent(cfg);
      Rng rng(4);
      const std::uint64_t enc = agent.encoder_hash();
      UpdateStats st;
      for (int u = 0; u < 3; ++u) {
        std::vector<double> last;
        const auto segs = rollout(agent, 2, 16, static_cast<std::uint64_t>(u), last);
        st = agent.update(segs, last, rng);
        CHECK(std::isfinite(st.l_ppo));
      }
      CHECK(agent.encoder_hash() != enc);
      CHECK(agent.ot().ready);
      CAPTURE(agent.ot().last_error);
      CHECK(agent.ot().fits == 2);
      CHECK(st.l_mse > 0.0);
      CHECK(st.minibatches == 2);
    }
  }

  TEST_CASE("checkpoint round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "gacd_agent_ckpt";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "m2.bin").string();
    AgentConfig cfg = small_config(Variant::M2, 16);
    cfg.use_ot = false;
    GacdAgent agent(cfg);
    agent.save(path);
    GacdAgent loaded = GacdAgent::load(path);
    CHECK(loaded.config().variant == Variant::M2);
    CHECK(loaded.config().width == 8);
    CHECK_FALSE(loaded.config().use_ot);
    for (const auto& g : episode_graphs(5, 1)) {
      const auto a = agent.node_distribution(g), b = loaded.node_distribution(g);
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-5);
    }
    // Loading is exact on the float-cast weights.
    loaded.save(path);
    GacdAgent again = GacdAgent::load(path);
    CHECK(again.store().hash() == loaded.store().hash());
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("config json round trip") {
    AgentConfig c = small_config(Variant::M3, 99);
    c.activation = nn::Activation::Tanh;
    c.ppo.lr = 1e-3;
    nlohmann::json j = c;
    const AgentConfig back = j.get<AgentConfig>();
    CHECK(nlohmann::json(back) == j);
    CHECK_THROWS(variant_from_string("M4"));
    CHECK(blue_kind_of(4) == BlueKind::DeployDecoy);
    CHECK_THROWS(blue_kind_of(5));
  }
}

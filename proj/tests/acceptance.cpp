// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Trained models and experiment directories go under --out.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "gacd/fgw.hpp"
#include "gacd/harness.hpp"
#include "gacd/otmap.hpp"
#include "test_util.hpp"

using namespace gacd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------- 1: FGW

// Quadruple-loop FGW objective, written independently of the library.
double fgw_oracle(const MeasuredGraph& a, const MeasuredGraph& b, const Eigen::MatrixXd& pi, double alpha) {
  double lin = 0.0, quad = 0.0;
  for (int i = 0; i < a.size(); ++i)
    for (int j = 0; j < b.size(); ++j) {
      double d2 = 0.0;
      for (Eigen::Index f = 0; f < a.features.cols(); ++f) {
        const double d = a.features(i, f) - b.features(j, f);
        d2 += d * d;
      }
      lin += std::sqrt(d2) * pi(i, j);
      for (int k = 0; k < a.size(); ++k)
        for (int l = 0; l < b.size(); ++l)
          quad += std::abs(a.structure(i, k) - b.structure(j, l)) * pi(i, j) * pi(k, l);
    }
  return (1.0 - alpha) * lin + alpha * quad;
}

Outcome criterion_fgw() {
  Rng rng(2024);
  double oracle_err = 0.0, brute_gap = -1e300, self_max = 0.0, iso_max = 0.0;
  int brute_checked = 0;
  const double t0 = now_seconds();
  for (int pair = 0; pair < 200; ++pair) {
    const int n = 1 + static_cast<int>(rng.index(5));
    const int m = pair % 2 == 0 ? n : 1 + static_cast<int>(rng.index(5));
    const double alpha = rng.uniform();
    const AttributedGraph ga = testutil::random_graph(n, rng);
    const AttributedGraph gb = testutil::random_graph(m, rng);
    const MeasuredGraph a = to_measured(ga), b = to_measured(gb);

    const FgwResult r = fgw_distance(a, b, alpha);
    oracle_err = std::max(oracle_err, std::abs(fgw_cost(a, b, r.coupling, alpha) - fgw_oracle(a, b, r.coupling, alpha)));
    oracle_err = std::max(oracle_err, std::abs(r.cost - fgw_oracle(a, b, r.coupling, alpha)));
    // A random admissible coupling: the product coupling blended with a random permutation.
    Eigen::MatrixXd pi = Eigen::MatrixXd::Constant(n, m, 1.0 / (n * m));
    if (n == m) {
      const auto perm = testutil::random_permutation(n, rng);
      const double w = rng.uniform();
      pi *= 1.0 - w;
      for (int i = 0; i < n; ++i) pi(i, perm[static_cast<std::size_t>(i)]) += w / n;
    }
    oracle_err = std::max(oracle_err, std::abs(fgw_cost(a, b, pi, alpha) - fgw_oracle(a, b, pi, alpha)));

    if (n == m) {
      brute_gap = std::max(brute_gap, r.cost - fgw_bruteforce(a, b, alpha));
      ++brute_checked;
    }
    self_max = std::max(self_max, std::abs(fgw_distance(a, a, alpha).cost));
    const AttributedGraph pa = permute(ga, testutil::random_permutation(n, rng));
    iso_max = std::max(iso_max, std::abs(fgw_distance(to_measured(pa), b, alpha).cost - r.cost));
  }
  const double secs = now_seconds() - t0;
  Outcome o;
  o.pass = oracle_err <= 1e-10 && brute_gap <= 1e-6 && self_max <= 1e-6 && iso_max <= 1e-6 && secs < 60.0;
  o.detail = "oracle err " + num(oracle_err) + ", solver - brute force max " + num(brute_gap) + " over " +
             std::to_string(brute_checked) + " equal-size pairs, self " + num(self_max) + ", isomorphism " + num(iso_max) +
             ", " + num(secs, 3) + " s";
  return o;
}

// ---------------------------------------------------------------- 2: SDOT

Outcome criterion_sdot() {
  const double t0 = now_seconds();
  double worst = 0.0;
  std::string cells;
  for (int d : {2, 8})
    for (int t : {4, 8, 16}) {
      const Eigen::MatrixXd z = sample_unit_cube(t, d, mix_seed(77, static_cast<std::uint64_t>(100 * d + t)));
      const LatentCodes codes = make_codes(z);
      SdotOptions opt;
      opt.seed = mix_seed(5, static_cast<std::uint64_t>(d * 31 + t));
      const SdotMap m = fit_sdot(codes, CostKind::SquaredEuclidean, opt);
      const double e = max_mass_error(m, estimate_masses(m, 100000, mix_seed(opt.seed, 99)));
      worst = std::max(worst, e);
      cells += " T" + std::to_string(t) + "/d" + std::to_string(d) + "=" + num(e, 3);
    }
  const double secs = now_seconds() - t0;
  return {worst <= 0.01 && secs < 300.0, "fresh 1e5-sample max mass error" + cells + ", " + num(secs, 3) + " s"};
}

// ---------------------------------------------------------------- 3: gradients

std::vector<AttributedGraph> observation_episode(int steps, std::uint64_t seed) {
  const Scenario s = vanilla_cc2();
  Environment env(s, RedKind::BLine);
  Rng rng(seed);
  std::vector<AttributedGraph> out{observation_to_graph(env.reset(seed), s)};
  for (int k = 0; k < steps; ++k) {
    BlueAction a{rng.bernoulli(0.3) ? BlueKind::DeployDecoy : BlueKind::Analyse,
                 static_cast<int>(rng.index(static_cast<std::size_t>(env.topology().num_hosts())))};
    if (!env.valid_action(a)) a = {BlueKind::Sleep, -1};
    out.push_back(observation_to_graph(env.step(a).observation, s));
  }
  return out;
}

AgentConfig micro_config(Variant v, std::uint64_t seed) {
  AgentConfig c;
  c.variant = v;
  c.width = 8;
  c.heads = 2;
  c.layers = 1;
  c.latent_dim = 4;
  c.forward_map_hidden = 8;
  c.sdot_mc_samples = 2000;
  c.fgw_samples = 8;
  c.seed = seed;
  return c;
}

using LossFn = std::function<nn::Var(nn::Tape&, nn::ParamStore&)>;

Outcome criterion_gradients() {
  const double t0 = now_seconds();
  const auto gs = observation_episode(12, 6);
  std::vector<const AttributedGraph*> all;
  for (const auto& g : gs) all.push_back(&g);
  double worst = 0.0;
  int checked = 0;
  std::string per;
  auto run = [&](const std::string& name, const LossFn& f, nn::ParamStore& store) {
    const auto rep = nn::finite_difference_check(f, store, 1e-5, 1e-8, 12, 3);
    worst = std::max(worst, rep.max_rel_error);
    checked += rep.checked;
    per += " " + name + "=" + num(rep.max_rel_error, 2);
  };
  for (Variant v : {Variant::M1, Variant::M2}) {
    GacdAgent agent(micro_config(v, 8));
    if (!agent.refit_ot(all, 3)) return {false, "transport fit failed on the micro-instance"};
    const GraphInput in = agent.prepare({&gs[3], &gs[9]});
    std::vector<int> nodes, kinds;
    std::vector<double> old, adv{0.8, -0.5}, ret{0.3, -0.2};
    {
      nn::Tape t;
      const PolicyOutput out = agent.forward(t, in);
      for (int g = 0; g < 2; ++g) {
        for (int i = in.batch.offsets[static_cast<std::size_t>(g)]; i < in.batch.offsets[static_cast<std::size_t>(g) + 1]; ++i)
          if (in.host_mask[static_cast<std::size_t>(i)]) {
            nodes.push_back(i);
            break;
          }
        kinds.push_back(1 + 2 * g);
      }
      const nn::Matrix lp = agent.chosen_logp(out, nodes, kinds).value();
      old = {lp(0, 0) + 0.05, lp(1, 0) - 0.05};
    }
    const std::vector<int> ids{0, 5, 17, 40, 99, 250};
    LossFn ppo = [&](nn::Tape& t, nn::ParamStore&) {
      const PolicyOutput out = agent.forward(t, in);
      return ppo_objective(t, agent.chosen_logp(out, nodes, kinds), out.entropy, out.value, old, adv, ret, agent.config().ppo).loss;
    };
    LossFn mse = [&](nn::Tape& t, nn::ParamStore&) { return agent.mse_loss(t); };
    LossFn fgw = [&](nn::Tape& t, nn::ParamStore&) { return agent.fgw_loss(t, ids); };
    LossFn composed = [&](nn::Tape& t, nn::ParamStore& s) {
      return nn::add(nn::add(ppo(t, s), nn::scale(mse(t, s), agent.config().w_mse)), nn::scale(fgw(t, s), agent.config().w_fgw));
    };
    const std::string tag = to_string(v);
    if (v == Variant::M1) {
      run("L_PPO", ppo, agent.store());
      run("L_MSE", mse, agent.store());
      run("L_FGW", fgw, agent.store());
    }
    run(tag + "-composed", composed, agent.store());
  }
  {
    GacdAgent agent(micro_config(Variant::M3, 4));
    Rng rng(2);
    for (auto& p : agent.store().params())
      if (p.name.rfind("enc.", 0) == 0)
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += 0.2 * rng.normal();
    const GraphInput in = agent.prepare({&gs[2], &gs[5]});
    run("L_AE", [&](nn::Tape& t, nn::ParamStore&) { return agent.ae_loss(t, in, agent.encode(t, in), 77).total; },
        agent.store());
  }
  const double secs = now_seconds() - t0;
  return {worst < 1e-4 && checked > 0 && secs < 300.0,
          "max relative error" + per + " (" + std::to_string(checked) + " entries), " + num(secs, 3) + " s"};
}

// ---------------------------------------------------------------- 5: PSG

Outcome criterion_psg() {
  ScenarioSpec spec;
  spec.ns_lower = 1;
  spec.ns_upper = 6;
  spec.nh_lower = 1;
  spec.nh_upper = 24;
  int invalid = 0, mismatched = 0;
  for (int i = 0; i < 1000; ++i) {
    spec.seed = static_cast<std::uint64_t>(i);
    const Scenario s = generate_scenario(spec);
    if (!validate(s).empty()) ++invalid;
    const std::string text = serialize_scenario(s);
    const Scenario back = parse_scenario(text);
    if (!(back == s) || serialize_scenario(back) != text) ++mismatched;
  }
  return {invalid == 0 && mismatched == 0,
          std::to_string(1000 - invalid) + "/1000 valid, " + std::to_string(mismatched) + " round-trip mismatches"};
}

// ---------------------------------------------------------------- 6: accounting

Outcome criterion_accounting() {
  int sum_mismatch = 0, oracle_mismatch = 0, penalty_bad = 0, too_long = 0, invalid_episodes = 0;
  const Scenario s = vanilla_cc2();
  for (int e = 0; e < 100; ++e) {
    Environment env(s, e % 2 ? RedKind::Meander : RedKind::BLine);
    env.reset(mix_seed(404, static_cast<std::uint64_t>(e)));
    Rng rng(mix_seed(505, static_cast<std::uint64_t>(e)));
    const int invalid_at = e % 5 == 0 ? static_cast<int>(rng.index(100)) : -1;
    double cumulative = 0.0;
    std::vector<double> rewards;
    int steps = 0;
    while (!env.done()) {
      BlueAction a{blue_kind_of(static_cast<int>(rng.index(kActionKinds))),
                   static_cast<int>(rng.index(static_cast<std::size_t>(env.topology().num_hosts())))};
      if (a.kind == BlueKind::Sleep) a.target = -1;
      if (steps == invalid_at) a = {BlueKind::Restore, env.topology().num_hosts() + 3};
      if (steps != invalid_at && !env.valid_action(a)) a = {BlueKind::Sleep, -1};
      const WorldState prev = env.state();
      const StepResult r = env.step(a);
      ++steps;
      cumulative += r.normalized_reward;
      rewards.push_back(r.normalized_reward);
      if (r.failure) {
        ++invalid_episodes;
        if (r.reward != -1500.0 || r.normalized_reward != -1500.0 || !r.truncated || !env.done()) ++penalty_bad;
      } else {
        const double raw = compute_reward(prev, env.state(), a, env.topology(), env.config().reward);
        if (raw != r.reward || normalize_reward(raw, s, env.config().reward) != r.normalized_reward) ++oracle_mismatch;
      }
    }
    if (invalid_at >= 0 && !(steps == invalid_at + 1)) ++penalty_bad;
    double direct = 0.0;
    for (double x : rewards) direct += x;
    if (direct != cumulative) ++sum_mismatch;
    if (steps > 100) ++too_long;
  }
  return {sum_mismatch == 0 && oracle_mismatch == 0 && penalty_bad == 0 && too_long == 0 && invalid_episodes == 20,
          "sum mismatches " + std::to_string(sum_mismatch) + ", reward-table mismatches " + std::to_string(oracle_mismatch) +
              ", bad invalid-action handling " + std::to_string(penalty_bad) + " of " + std::to_string(invalid_episodes) +
              ", episodes over 100 steps " + std::to_string(too_long)};
}

// ---------------------------------------------------------------- trained criteria

struct Runs {
  std::string out;
  long steps = 50000;
  int episodes = 100;
  bool reuse = false;
  TrainConfig base;
};

std::string train_or_reuse(const Runs& runs, TrainConfig c) {
  c.out_dir = (fs::path(runs.out) / "models").string();
  const std::string ckpt = (fs::path(c.out_dir) / (c.name + ".ckpt")).string();
  if (runs.reuse && fs::exists(ckpt) && fs::exists(ckpt + ".json")) {
    std::cout << "  reusing " << ckpt << std::endl;
    return ckpt;
  }
  std::cout << "  training " << c.name << " (" << c.total_steps << " steps)" << std::flush;
  const TrainResult r = train(c);
  std::cout << " done in " << num(r.seconds, 4) << " s" << std::endl;
  return r.checkpoint;
}

TrainConfig reference_config(const Runs& runs, const std::string& name) {
  TrainConfig c = runs.base;
  c.name = name;
  c.topologies = 1;
  c.include_reference = true;
  c.red = RedMode::BLine;
  c.total_steps = runs.steps;
  return c;
}

EvalOptions eval_opts(const Runs& runs) {
  EvalOptions eo;
  eo.episodes = runs.episodes;
  eo.red = RedKind::BLine;
  eo.seed = mix_seed(runs.base.seed, 77);
  return eo;
}

const ConditionReport& find(const ExperimentResult& r, const std::string& name) {
  for (const auto& x : r.rows)
    if (x.condition == name) return x;
  throw std::logic_error("missing condition " + name);
}

std::string stat(const ConditionReport& r) { return num(r.mean, 5) + " +- " + num(r.std, 4); }

ExperimentOptions exp_options(const Runs& runs, const std::string& dir) {
  ExperimentOptions opt;
  opt.out_dir = (fs::path(runs.out) / dir).string();
  opt.train = runs.base;
  opt.train.total_steps = runs.steps;
  opt.episodes = runs.episodes;
  return opt;
}

Outcome criterion_training(const Runs& runs, std::string& m1_ckpt) {
  m1_ckpt = train_or_reuse(runs, reference_config(runs, "m1_reference"));
  const auto agent = std::make_shared<GacdAgent>(GacdAgent::load(m1_ckpt));
  const EvalOptions eo = eval_opts(runs);
  std::vector<EpisodeRecord> eps = evaluate(gacd_policy(agent), vanilla_cc2(), eo, "M1");
  const auto rnd = evaluate(random_policy(), vanilla_cc2(), eo, "random");
  eps.insert(eps.end(), rnd.begin(), rnd.end());
  const ConditionReport a = summarize("M1", eps, 0.0), b = summarize("random", eps, 0.0);
  const fs::path dir = fs::path(runs.out) / "training";
  fs::create_directories(dir);
  write_report_csv((dir / "report.csv").string(), {a, b});
  write_episodes_csv((dir / "episodes.csv").string(), eps);
  return {a.mean >= 0.5 * b.mean,
          "M1 " + stat(a) + " vs random " + stat(b) + " (ratio " + num(b.mean / std::min(a.mean, -1e-12), 3) + "x)"};
}

Outcome criterion_equivariance(const Runs& runs, const std::string& m1_ckpt, std::string& flat_ckpt) {
  // Node distributions on random graphs and observation graphs, trained M1 plus fresh M2 and M3.
  Rng rng(4242);
  double worst = 0.0;
  const auto eps_graphs = observation_episode(60, 12);
  std::vector<std::shared_ptr<GacdAgent>> agents{std::make_shared<GacdAgent>(GacdAgent::load(m1_ckpt))};
  for (Variant v : {Variant::M2, Variant::M3}) {
    AgentConfig c = runs.base.agent;
    c.variant = v;
    c.seed = 3;
    agents.push_back(std::make_shared<GacdAgent>(c));
  }
  int pairs = 0;
  for (int trial = 0; trial < 100; ++trial) {
    AttributedGraph g = trial % 2 ? eps_graphs[static_cast<std::size_t>(trial / 2)] : testutil::random_graph(3 + static_cast<int>(rng.index(14)), rng);
    bool has_host = false;
    for (const auto& n : g.nodes) has_host = has_host || n.kind == NodeKind::Host;
    if (!has_host) {
      g.nodes[0].kind = NodeKind::Host;
      g.features[0] = {0, 1, 0, 0, 0, 0, 0};
    }
    const auto sigma = testutil::random_permutation(g.num_nodes(), rng);
    const AttributedGraph pg = permute(g, sigma);
    for (const auto& a : agents) {
      const auto p = a->node_distribution(g);
      const auto pp = a->node_distribution(pg);
      for (std::size_t i = 0; i < p.size(); ++i) worst = std::max(worst, std::abs(p[i] - pp[static_cast<std::size_t>(sigma[i])]));
    }
    ++pairs;
  }
  flat_ckpt = train_or_reuse(runs, [&] {
    TrainConfig c = reference_config(runs, "flat_reference");
    c.learner = LearnerKind::Flat;
    return c;
  }());
  ExperimentOptions opt = exp_options(runs, "randomization");
  opt.gacd_ckpt = m1_ckpt;
  opt.flat_ckpt = flat_ckpt;
  const ExperimentResult r = run_experiment("randomization", opt);
  const double reward_diff = r.extra.at("gacd_max_episode_diff").get<double>();
  const auto& f = find(r, "flat");
  const auto& fr = find(r, "flat+randomized");
  const bool degrades = fr.mean < f.mean;
  return {worst <= 1e-6 && reward_diff <= 1e-6 && degrades,
          "node distribution max diff " + num(worst) + " on " + std::to_string(pairs) +
              " pairs x 3 variants, GACD per-episode reward max diff " + num(reward_diff) + " (" + stat(find(r, "gacd")) +
              "), flat " + stat(f) + " -> randomized " + stat(fr)};
}

Outcome criterion_sweep(const Runs& runs, std::string& m1_at4) {
  ExperimentOptions opt = exp_options(runs, "sweep");
  opt.variants = {Variant::M1};
  opt.counts = {4, 16};
  const ExperimentResult r = run_experiment("sweep", opt);
  m1_at4 = (fs::path(opt.out_dir) / "models" / "M1_4.ckpt").string();
  const auto& lo = find(r, "M1@4");
  const auto& hi = find(r, "M1@16");
  const double pooled = pooled_std(lo, hi);
  return {hi.mean <= lo.mean + pooled,
          "M1@4 " + stat(lo) + ", M1@16 " + stat(hi) + ", pooled std " + num(pooled, 4)};
}

Outcome criterion_switch(const Runs& runs, const std::string& m1_at4, const std::string& flat_ckpt) {
  ExperimentOptions opt = exp_options(runs, "switch");
  opt.gacd_ckpt = m1_at4;
  opt.flat_ckpt = flat_ckpt;
  const ExperimentResult r = run_experiment("switch", opt);
  const int invalid = r.extra.at("gacd_post_switch_invalid").get<int>();
  const double g = r.extra.at("gacd_post_switch_step_mean").get<double>();
  const double f = r.extra.at("flat_post_switch_step_mean").get<double>();
  int post_steps = 0;
  for (const auto& e : r.episodes)
    if (e.condition == "gacd+switch") post_steps += e.post_switch_steps;
  return {invalid == 0 && g > f,
          "GACD invalid " + std::to_string(invalid) + "/" + std::to_string(post_steps) +
              " post-switch steps, post-switch mean step reward GACD " + num(g, 4) + " vs flat " + num(f, 4) +
              ", null switch within 1 std: " + (r.extra.at("null_switch_within_1sd").get<bool>() ? "yes" : "no")};
}

Outcome criterion_ot(const Runs& runs) {
  ExperimentOptions opt = exp_options(runs, "ot-ablation");
  opt.counts = {4};
  const ExperimentResult r = run_experiment("ot-ablation", opt);
  const auto& on = find(r, "M3+OT");
  const auto& off = find(r, "M3-OT");
  const double pooled = pooled_std(on, off);
  return {on.mean >= off.mean - pooled, "OT on " + stat(on) + ", OT off " + stat(off) + ", pooled std " + num(pooled, 4)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  Runs runs;
  runs.out = "acceptance_out";
  std::string config_path;
  std::vector<int> only;
  app.add_option("--out", runs.out, "Directory for models and experiment outputs");
  app.add_option("--steps", runs.steps, "Training budget per run")->check(CLI::PositiveNumber);
  app.add_option("--episodes", runs.episodes, "Evaluation episodes per condition")->check(CLI::PositiveNumber);
  app.add_option("--config", config_path, "Base TrainConfig JSON")->check(CLI::ExistingFile);
  app.add_flag("--reuse", runs.reuse, "Reuse existing checkpoints under --out instead of retraining");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  if (!config_path.empty()) runs.base = load_train_config(config_path);
  if (config_path.empty()) {
    runs.base.psg.ns_lower = 3;
    runs.base.psg.ns_upper = 4;
    runs.base.psg.nh_lower = 10;
    runs.base.psg.nh_upper = 16;
    runs.base.psg.seed = 1;
    runs.base.seed = 7;
  }
  fs::create_directories(runs.out);

  std::string m1_ckpt, flat_ckpt, m1_at4;
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion_fgw},
      {2, criterion_sdot},
      {3, criterion_gradients},
      {5, criterion_psg},
      {6, criterion_accounting},
      {7, [&] { return criterion_training(runs, m1_ckpt); }},
      {4, [&] {
         if (m1_ckpt.empty()) m1_ckpt = train_or_reuse(runs, reference_config(runs, "m1_reference"));
         return criterion_equivariance(runs, m1_ckpt, flat_ckpt);
       }},
      {8, [&] { return criterion_sweep(runs, m1_at4); }},
      {9, [&] {
         if (m1_at4.empty()) {
           TrainConfig c = runs.base;
           c.name = "M1_4";
           c.topologies = 4;
           c.total_steps = runs.steps;
           c.out_dir = (fs::path(runs.out) / "sweep" / "models").string();
           const std::string p = (fs::path(c.out_dir) / "M1_4.ckpt").string();
           m1_at4 = runs.reuse && fs::exists(p) ? p : train(c).checkpoint;
         }
         if (flat_ckpt.empty()) {
           TrainConfig c = reference_config(runs, "flat_reference");
           c.learner = LearnerKind::Flat;
           flat_ckpt = train_or_reuse(runs, c);
         }
         return criterion_switch(runs, m1_at4, flat_ckpt);
       }},
      {10, [&] { return criterion_ot(runs); }},
  };

  std::map<int, Outcome> results;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    std::cout << "criterion " << id << " ..." << std::endl;
    const double t0 = now_seconds();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    o.detail += " [" + num(now_seconds() - t0, 4) + " s]";
    results[id] = o;
    std::cout << "  " << (o.pass ? "PASS" : "FAIL") << std::endl;
  }

  std::cout << "\n";
  bool all = true;
  json summary = json::object();
  for (const auto& [id, o] : results) {
    std::cout << "ACCEPTANCE " << id << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << "\n";
    all = all && o.pass;
    summary[std::to_string(id)] = {{"pass", o.pass}, {"detail", o.detail}};
  }
  std::ofstream(fs::path(runs.out) / "summary.json") << summary.dump(2) << "\n";
  return all ? 0 : 1;
}

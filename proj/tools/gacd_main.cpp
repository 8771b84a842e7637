#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "gacd/fgw.hpp"
#include "gacd/harness.hpp"
#include "gacd/otmap.hpp"

using namespace gacd;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

bool is_flat_checkpoint(const std::string& ckpt) {
  const json meta = json::parse(read_file(ckpt + ".json"));
  return meta.contains("flat");
}

RedKind red_kind(const std::string& s) {
  if (s == "bline") return RedKind::BLine;
  if (s == "meander") return RedKind::Meander;
  throw std::invalid_argument("--red must be bline or meander");
}

json report_json(const ConditionReport& r) {
  return {{"condition", r.condition}, {"mean", r.mean}, {"std", r.std}, {"episodes", r.episodes},
          {"invalid", r.invalid}, {"seconds", r.seconds}};
}

// Codes file: {"codes": [[...], ...], "nu": [...]} or a bare array of rows.
LatentCodes read_codes(const std::string& path, int dim) {
  const json j = json::parse(read_file(path));
  const json rows = j.is_array() ? j : j.at("codes");
  if (!rows.is_array() || rows.empty()) throw std::invalid_argument("codes file holds no codes");
  Eigen::MatrixXd z(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != static_cast<std::size_t>(dim))
      throw std::invalid_argument("code " + std::to_string(i) + " has dimension " + std::to_string(rows[i].size()) +
                                  ", expected " + std::to_string(dim));
    for (int k = 0; k < dim; ++k) z(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)].get<double>();
  }
  std::vector<double> nu;
  if (j.is_object() && j.contains("nu")) nu = j.at("nu").get<std::vector<double>>();
  return make_codes(z, nu);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-based autonomous cyber defence: training, evaluation and tools"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "Train an agent from a JSON config");
  std::string config_path, out_override;
  train_cmd->add_option("--config", config_path, "TrainConfig JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out_override, "Override out_dir");

  auto* eval_cmd = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
  std::string ckpt, red = "bline", scenario_path, csv_path, baseline;
  int episodes = 100;
  std::uint64_t eval_seed = 0;
  bool randomize = false;
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint path");
  eval_cmd->add_option("--baseline", baseline, "Evaluate a fixed policy instead")->check(CLI::IsMember({"random", "sleep"}));
  eval_cmd->add_option("--episodes", episodes)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--red", red)->check(CLI::IsMember({"bline", "meander"}));
  eval_cmd->add_option("--seed", eval_seed);
  eval_cmd->add_option("--scenario", scenario_path, "Scenario JSON (default: reference network)");
  eval_cmd->add_flag("--randomize", randomize, "Permute the node order every episode");
  eval_cmd->add_option("--csv", csv_path, "Write per-episode rows here");

  auto* exp_cmd = app.add_subcommand("exp", "Run a named experiment");
  std::string exp_name, exp_out, exp_config, gacd_ckpt, flat_ckpt;
  int exp_episodes = 100;
  long exp_steps = 0;
  std::vector<int> counts;
  exp_cmd->add_option("name", exp_name)->required()->check(
      CLI::IsMember({"sweep", "randomization", "switch", "ot-ablation", "cross-red"}));
  exp_cmd->add_option("--out", exp_out)->required();
  exp_cmd->add_option("--config", exp_config, "Base TrainConfig JSON")->check(CLI::ExistingFile);
  exp_cmd->add_option("--episodes", exp_episodes)->check(CLI::PositiveNumber);
  exp_cmd->add_option("--steps", exp_steps, "Override total_steps per training run");
  exp_cmd->add_option("--counts", counts, "Topology counts");
  exp_cmd->add_option("--gacd-ckpt", gacd_ckpt);
  exp_cmd->add_option("--flat-ckpt", flat_ckpt);

  auto* psg_cmd = app.add_subcommand("psg", "Generate a scenario");
  std::string spec_path, psg_out;
  std::uint64_t psg_seed = 0;
  psg_cmd->add_option("--spec", spec_path)->required()->check(CLI::ExistingFile);
  psg_cmd->add_option("--seed", psg_seed)->required();
  psg_cmd->add_option("--out", psg_out)->required();

  auto* fgw_cmd = app.add_subcommand("fgw", "FGW distance between two observation graphs");
  std::string graph_a, graph_b;
  double alpha = 0.5;
  fgw_cmd->add_option("--a", graph_a)->required()->check(CLI::ExistingFile);
  fgw_cmd->add_option("--b", graph_b)->required()->check(CLI::ExistingFile);
  fgw_cmd->add_option("--alpha", alpha)->check(CLI::Range(0.0, 1.0));

  auto* sdot_cmd = app.add_subcommand("sdot", "Fit a semi-discrete transport map on the unit cube");
  std::string codes_path;
  int dim = 2, samples = 50000;
  std::uint64_t sdot_seed = 0;
  sdot_cmd->add_option("--codes", codes_path)->required()->check(CLI::ExistingFile);
  sdot_cmd->add_option("--dim", dim)->required()->check(CLI::PositiveNumber);
  sdot_cmd->add_option("--samples", samples)->check(CLI::PositiveNumber);
  sdot_cmd->add_option("--seed", sdot_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      TrainConfig c = load_train_config(config_path);
      if (!out_override.empty()) c.out_dir = out_override;
      const TrainResult r = train(c);
      std::cout << json{{"checkpoint", r.checkpoint}, {"metrics", r.metrics_csv}, {"updates", r.updates},
                        {"steps", r.steps}, {"seconds", r.seconds}}
                       .dump(2)
                << "\n";
    } else if (*eval_cmd) {
      if (ckpt.empty() == baseline.empty()) throw std::invalid_argument("give exactly one of --ckpt and --baseline");
      const Scenario s = scenario_path.empty() ? vanilla_cc2() : parse_scenario(read_file(scenario_path));
      Policy policy;
      std::string name = baseline;
      if (baseline == "random") policy = random_policy();
      else if (baseline == "sleep") policy = sleep_policy();
      else if (is_flat_checkpoint(ckpt)) {
        policy = flat_policy(std::make_shared<FlatAgent>(FlatAgent::load(ckpt)));
        name = "flat";
      } else {
        policy = gacd_policy(std::make_shared<GacdAgent>(GacdAgent::load(ckpt)));
        name = "gacd";
      }
      EvalOptions eo;
      eo.episodes = episodes;
      eo.red = red_kind(red);
      eo.seed = eval_seed;
      eo.randomize = randomize;
      const auto t0 = std::chrono::steady_clock::now();
      const auto eps = evaluate(policy, s, eo, name);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (!csv_path.empty()) write_episodes_csv(csv_path, eps);
      std::cout << report_json(summarize(name, eps, secs)).dump(2) << "\n";
    } else if (*exp_cmd) {
      ExperimentOptions opt;
      opt.out_dir = exp_out;
      if (!exp_config.empty()) opt.train = load_train_config(exp_config);
      if (exp_steps > 0) opt.train.total_steps = exp_steps;
      opt.episodes = exp_episodes;
      if (!counts.empty()) opt.counts = counts;
      opt.gacd_ckpt = gacd_ckpt;
      opt.flat_ckpt = flat_ckpt;
      const ExperimentResult r = run_experiment(exp_name, opt);
      json rows = json::array();
      for (const auto& row : r.rows) rows.push_back(report_json(row));
      std::cout << json{{"rows", rows}, {"checks", r.extra}}.dump(2) << "\n";
    } else if (*psg_cmd) {
      ScenarioSpec spec = parse_scenario_spec(read_file(spec_path));
      spec.seed = psg_seed;
      const Scenario s = generate_scenario(spec);
      write_file(psg_out, serialize_scenario(s));
      std::cout << psg_out << ": " << s.subnets.size() << " subnets, " << s.hosts.size() << " hosts\n";
    } else if (*fgw_cmd) {
      const AttributedGraph a = graph_from_json(read_file(graph_a));
      const AttributedGraph b = graph_from_json(read_file(graph_b));
      const FgwResult r = fgw_distance(a, b, alpha);
      json coupling = json::array();
      for (Eigen::Index i = 0; i < r.coupling.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index k = 0; k < r.coupling.cols(); ++k) row.push_back(r.coupling(i, k));
        coupling.push_back(row);
      }
      std::cout << json{{"cost", r.cost}, {"iterations", r.iterations}, {"coupling", coupling}}.dump(2) << "\n";
    } else if (*sdot_cmd) {
      const LatentCodes codes = read_codes(codes_path, dim);
      SdotOptions opt;
      opt.mc_samples = std::max(samples, 10 * codes.size());
      opt.seed = sdot_seed;
      const SdotMap m = fit_sdot(codes, CostKind::SquaredEuclidean, opt);
      const auto fresh = estimate_masses(m, opt.mc_samples, mix_seed(sdot_seed, 1));
      std::vector<double> phi(m.phi.data(), m.phi.data() + m.phi.size());
      std::cout << json{{"codes", codes.size()},
                        {"dim", dim},
                        {"phi", phi},
                        {"fit_masses", m.masses},
                        {"fit_mass_error", m.fit_mass_error},
                        {"fresh_masses", fresh},
                        {"fresh_mass_error", max_mass_error(m, fresh)},
                        {"iterations", m.iterations}}
                       .dump(2)
                << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

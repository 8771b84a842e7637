#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "gacd/fgw.hpp"
#include "gacd/harness.hpp"
#include "gacd/otmap.hpp"

namespace py = pybind11;
using namespace gacd;

namespace {

BlueKind blue_kind_from_string(const std::string& s) {
  for (int k = 0; k < kActionKinds; ++k)
    if (to_string(blue_kind_of(k)) == s) return blue_kind_of(k);
  throw std::invalid_argument("unknown blue action '" + s + "'");
}

Scenario scenario_or_reference(const std::string& text) { return text.empty() ? vanilla_cc2() : parse_scenario(text); }

py::dict step_dict(const StepResult& r, const Environment& env) {
  py::dict d;
  d["reward"] = r.reward;
  d["normalized_reward"] = r.normalized_reward;
  d["terminated"] = r.terminated;
  d["truncated"] = r.truncated;
  d["failure"] = r.failure;
  d["red_action"] = to_string(r.red.kind);
  d["graph"] = graph_to_json(observation_to_graph(r.observation, env.topology().scenario()));
  return d;
}

py::dict report_dict(const std::vector<EpisodeRecord>& eps, const std::string& name) {
  const ConditionReport r = summarize(name, eps, 0.0);
  std::vector<double> rewards;
  int invalid = 0;
  for (const auto& e : eps) {
    rewards.push_back(e.reward);
    invalid += e.invalid;
  }
  py::dict d;
  d["mean"] = r.mean;
  d["std"] = r.std;
  d["episodes"] = r.episodes;
  d["invalid"] = invalid;
  d["rewards"] = rewards;
  return d;
}

}  // namespace

PYBIND11_MODULE(_gacd, m) {
  m.doc() = "Graph-based autonomous cyber defence core";

  m.def("reference_scenario", [] { return serialize_scenario(vanilla_cc2()); }, "Reference network as scenario JSON");
  m.def(
      "generate_scenario",
      [](const std::string& spec_json, std::uint64_t seed) {
        ScenarioSpec spec = parse_scenario_spec(spec_json);
        spec.seed = seed;
        return serialize_scenario(generate_scenario(spec));
      },
      py::arg("spec_json"), py::arg("seed"));
  m.def("validate_scenario", [](const std::string& text) { return validate(parse_scenario(text)); }, py::arg("scenario_json"));
  m.def("normalize_scenario", [](const std::string& text) { return serialize_scenario(parse_scenario(text)); },
        py::arg("scenario_json"), "Parse and re-serialize");

  py::class_<Environment>(m, "Environment")
      .def(py::init([](const std::string& scenario, const std::string& red, double p_green, bool red_enabled, int max_steps) {
             SimConfig c;
             c.p_green = p_green;
             c.red_enabled = red_enabled;
             c.max_steps = max_steps;
             return std::make_unique<Environment>(scenario_or_reference(scenario), red_kind_from_string(red), c);
           }),
           py::arg("scenario_json") = "", py::arg("red") = "bline", py::arg("p_green") = 0.25,
           py::arg("red_enabled") = true, py::arg("max_steps") = 100)
      .def(
          "reset",
          [](Environment& env, std::uint64_t seed) {
            return graph_to_json(observation_to_graph(env.reset(seed), env.topology().scenario()));
          },
          py::arg("seed"))
      .def(
          "step",
          [](Environment& env, const std::string& kind, int target) {
            const StepResult r = env.step({blue_kind_from_string(kind), target});
            return step_dict(r, env);
          },
          py::arg("kind"), py::arg("target") = -1)
      .def(
          "switch_scenario",
          [](Environment& env, const std::string& text) {
            const Scenario s = parse_scenario(text);
            return graph_to_json(observation_to_graph(env.switch_scenario(s), s));
          },
          py::arg("scenario_json"))
      .def("valid_action",
           [](const Environment& env, const std::string& kind, int target) {
             return env.valid_action({blue_kind_from_string(kind), target});
           },
           py::arg("kind"), py::arg("target") = -1)
      .def_property_readonly("num_hosts", [](const Environment& env) { return env.topology().num_hosts(); })
      .def_property_readonly("done", &Environment::done)
      .def_property_readonly("step_index", [](const Environment& env) { return env.state().step_index; });

  m.def(
      "permute_graph",
      [](const std::string& graph_json, const std::vector<int>& sigma) {
        return graph_to_json(permute(graph_from_json(graph_json), sigma));
      },
      py::arg("graph_json"), py::arg("sigma"));

  m.def(
      "fgw_distance",
      [](const std::string& a, const std::string& b, double alpha) {
        const FgwResult r = fgw_distance(graph_from_json(a), graph_from_json(b), alpha);
        return py::make_tuple(r.cost, Eigen::MatrixXd(r.coupling));
      },
      py::arg("graph_a_json"), py::arg("graph_b_json"), py::arg("alpha") = 0.5,
      "FGW cost and optimal coupling between two observation graphs");

  m.def(
      "fit_sdot",
      [](const Eigen::MatrixXd& codes, int samples, std::uint64_t seed) {
        SdotOptions opt;
        const LatentCodes lc = make_codes(codes);
        opt.mc_samples = std::max(samples, 10 * lc.size());
        opt.seed = seed;
        const SdotMap map = fit_sdot(lc, CostKind::SquaredEuclidean, opt);
        const auto fresh = estimate_masses(map, opt.mc_samples, mix_seed(seed, 1));
        py::dict d;
        d["phi"] = Eigen::VectorXd(map.phi);
        d["masses"] = map.masses;
        d["fit_mass_error"] = map.fit_mass_error;
        d["fresh_mass_error"] = max_mass_error(map, fresh);
        d["iterations"] = map.iterations;
        return d;
      },
      py::arg("codes"), py::arg("samples") = 50000, py::arg("seed") = 0,
      "Semi-discrete transport from the unit cube onto equal-mass codes (rows of a T x d array)");

  py::class_<GacdAgent, std::shared_ptr<GacdAgent>>(m, "Agent")
      .def(py::init([](const std::string& config_json) {
             return std::make_shared<GacdAgent>(nlohmann::json::parse(config_json).get<AgentConfig>());
           }),
           py::arg("config_json") = "{}")
      .def_static("load", [](const std::string& path) { return std::make_shared<GacdAgent>(GacdAgent::load(path)); },
                  py::arg("path"))
      .def("save", &GacdAgent::save, py::arg("path"))
      .def(
          "act",
          [](GacdAgent& a, const std::string& graph_json) {
            const Decision d = a.act(graph_from_json(graph_json), nullptr);
            return py::make_tuple(to_string(d.action.kind), d.action.target, d.logp, d.value);
          },
          py::arg("graph_json"), "Greedy action: (kind, target host, log-probability, value)")
      .def(
          "node_distribution",
          [](GacdAgent& a, const std::string& graph_json) { return a.node_distribution(graph_from_json(graph_json)); },
          py::arg("graph_json"))
      .def_property_readonly("config", [](const GacdAgent& a) { return nlohmann::json(a.config()).dump(); });

  m.def(
      "train",
      [](const std::string& config_json) {
        TrainConfig c = nlohmann::json::parse(config_json).get<TrainConfig>();
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(c);
        }
        py::dict d;
        d["checkpoint"] = r.checkpoint;
        d["metrics_csv"] = r.metrics_csv;
        d["updates"] = r.updates;
        d["steps"] = r.steps;
        d["seconds"] = r.seconds;
        return d;
      },
      py::arg("config_json"));

  m.def(
      "evaluate",
      [](const std::string& policy, int episodes, const std::string& red, std::uint64_t seed, bool randomize,
         const std::string& scenario_json) {
        Policy p;
        if (policy == "random") p = random_policy();
        else if (policy == "sleep") p = sleep_policy();
        else p = gacd_policy(std::make_shared<GacdAgent>(GacdAgent::load(policy)));
        EvalOptions eo;
        eo.episodes = episodes;
        eo.red = red_kind_from_string(red);
        eo.seed = seed;
        eo.randomize = randomize;
        std::vector<EpisodeRecord> eps;
        {
          py::gil_scoped_release release;
          eps = evaluate(p, scenario_or_reference(scenario_json), eo, policy);
        }
        return report_dict(eps, policy);
      },
      py::arg("policy"), py::arg("episodes") = 100, py::arg("red") = "bline", py::arg("seed") = 0,
      py::arg("randomize") = false, py::arg("scenario_json") = "",
      "Greedy evaluation of a checkpoint path, or of the 'random' / 'sleep' baselines");

  m.attr("code_version") = code_version();
}

#pragma once

#include <functional>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "gacd/agent.hpp"
#include "gacd/cybersim.hpp"
#include "gacd/graphobs.hpp"
#include "gacd/scenario.hpp"

namespace gacd {

/// Red assignment per task: fixed kind, or uniform over both kinds.
enum class RedMode { BLine, Meander, Mixed };
std::string to_string(RedMode m);
RedMode red_mode_from_string(const std::string& s);

void to_json(nlohmann::json& j, const SimConfig& c);
void from_json(const nlohmann::json& j, SimConfig& c);

struct FlatConfig {
  int hidden = 64;
  PpoConfig ppo;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const FlatConfig& c);
void from_json(const nlohmann::json& j, FlatConfig& c);

enum class LearnerKind { Gacd, Flat };

struct TrainConfig {
  std::string name = "run";
  LearnerKind learner = LearnerKind::Gacd;
  AgentConfig agent;
  FlatConfig flat;
  int topologies = 1;
  bool include_reference = true;  // topology 0 is the reference network
  ScenarioSpec psg;               // generator bounds for the other topologies
  RedMode red = RedMode::Mixed;
  long total_steps = 50000;
  int envs = 8;
  int horizon = 64;  // steps per environment per update
  double reward_scale = 0.1;
  SimConfig sim;
  int pretrain_episodes = 10;  // per topology (M3)
  int pretrain_episode_steps = 50;
  int pretrain_steps = 300;
  int pretrain_batch = 8;
  std::uint64_t seed = 0;
  std::string out_dir = "runs";

  /// Throws std::invalid_argument naming the first bad field.
  void check() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_train_config(const std::string& path);

/// Topology set of a training run: reference network first (if enabled), then PSG draws.
std::vector<Scenario> make_topologies(const TrainConfig& cfg);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& s);
std::string config_hash(const nlohmann::json& j);
std::string code_version();

// ---------------------------------------------------------------- flat baseline

/// Flat-observation PPO: input is the 4 state bits of every host in node order
/// (length frozen at the training topology), output a logit per (host slot, kind).
class FlatAgent {
 public:
  FlatAgent(int hosts, FlatConfig cfg);

  int hosts() const { return hosts_; }
  const FlatConfig& config() const { return cfg_; }
  nn::ParamStore& store() { return store_; }

  struct View {
    Eigen::VectorXd obs;        // 4 * hosts
    nn::Matrix mask;            // 1 x (hosts * 5)
    std::vector<int> host_of;   // host index behind each slot, -1 if the slot is empty
  };
  /// Builds the flat view of an observation graph; hosts are taken in node order,
  /// zero-padded or truncated to the trained length.
  View view(const AttributedGraph& g) const;

  struct Choice {
    int slot = 0;
    int kind = 0;
    double logp = 0.0;
    double value = 0.0;
    BlueAction action;  // empty slots map to Sleep
  };
  Choice act(const View& v, Rng* rng);

  struct Step {
    View view;
    int index = 0;  // slot * 5 + kind
    double logp = 0.0;
    double value = 0.0;
    double reward = 0.0;
    bool done = false;
  };
  UpdateStats update(const std::vector<std::vector<Step>>& segments, const std::vector<double>& last_values, Rng& rng);

  void save(const std::string& path) const;
  static FlatAgent load(const std::string& path);

 private:
  nn::Var logits(nn::Tape& t, const nn::Matrix& obs);
  nn::Var values(nn::Tape& t, const nn::Matrix& obs);

  int hosts_;
  FlatConfig cfg_;
  nn::ParamStore store_;
  nn::Mlp pi_;
  nn::Mlp v_;
};

// ---------------------------------------------------------------- training

struct TrainResult {
  std::string checkpoint;
  std::string metrics_csv;
  int updates = 0;
  long steps = 0;
  double seconds = 0.0;
};

/// Multi-task PPO training; writes <out_dir>/<name>.ckpt (+ .json), <name>_metrics.csv and
/// <name>_episodes.csv (one row per finished training episode with its topology and red kind).
TrainResult train(const TrainConfig& cfg);

// ---------------------------------------------------------------- evaluation

/// What a policy sees at one step: the (possibly permuted) observation graph.
struct StepView {
  const Environment& env;
  const AttributedGraph& graph;
};
using Policy = std::function<BlueAction(const StepView&, Rng&)>;

Policy gacd_policy(std::shared_ptr<GacdAgent> agent);
Policy flat_policy(std::shared_ptr<FlatAgent> agent);
/// Uniform over the valid (host, kind) pairs.
Policy random_policy();
Policy sleep_policy();

struct EvalOptions {
  int episodes = 100;
  RedKind red = RedKind::BLine;
  std::uint64_t seed = 0;
  bool randomize = false;  // per-episode node order permutation
  int switch_step = -1;    // < 0: no switch
  std::vector<Scenario> switch_pool;  // episode e switches to switch_pool[e % size]
  SimConfig sim;
};

struct EpisodeRecord {
  std::string condition;
  int episode = 0;
  std::uint64_t seed = 0;
  double reward = 0.0;  // sum of normalized step rewards
  int steps = 0;
  int invalid = 0;
  double post_switch_reward = 0.0;  // sum over steps at or after the switch
  int post_switch_steps = 0;
  int post_switch_invalid = 0;
  std::vector<double> step_rewards;
};

struct ConditionReport {
  std::string condition;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  int episodes = 0;
  double seconds = 0.0;
  double post_switch_step_mean = 0.0;
  int invalid = 0;
};

/// Node order permutation for one episode: nodes sorted by a seeded hash of their label,
/// so the order is stable across the steps of an episode as decoys come and go.
std::vector<int> episode_permutation(const AttributedGraph& g, std::uint64_t episode_seed);

std::vector<EpisodeRecord> evaluate(const Policy& policy, const Scenario& scenario, const EvalOptions& opt,
                                    const std::string& condition);
ConditionReport summarize(const std::string& condition, const std::vector<EpisodeRecord>& eps, double seconds);

void write_report_csv(const std::string& path, const std::vector<ConditionReport>& rows);
void write_episodes_csv(const std::string& path, const std::vector<EpisodeRecord>& rows);
std::vector<EpisodeRecord> read_episodes_csv(const std::string& path);

/// Pooled standard deviation of two conditions.
double pooled_std(const ConditionReport& a, const ConditionReport& b);

// ---------------------------------------------------------------- experiments

struct ExperimentOptions {
  std::string out_dir = "exp";
  TrainConfig train;  // base training config (budget, seeds, hyperparameters)
  int episodes = 100;
  std::vector<int> counts{4, 8, 16};
  std::vector<Variant> variants{Variant::M1, Variant::M2, Variant::M3};
  int switch_step = 50;
  int switch_pool = 10;
  std::string gacd_ckpt;  // reuse instead of training, where the experiment allows it
  std::string flat_ckpt;
};

void to_json(nlohmann::json& j, const ExperimentOptions& o);

struct ExperimentResult {
  std::vector<ConditionReport> rows;
  std::vector<EpisodeRecord> episodes;
  nlohmann::json extra;  // experiment-specific checks
};

/// Writes report.csv, episodes.csv and config.json (seed, config hash, code version) into dir.
void write_experiment(const std::string& dir, const std::string& name, const ExperimentOptions& opt,
                      const ExperimentResult& r);

ExperimentResult experiment_sweep(const ExperimentOptions& opt);
ExperimentResult experiment_randomization(const ExperimentOptions& opt);
ExperimentResult experiment_switch(const ExperimentOptions& opt);
ExperimentResult experiment_ot_ablation(const ExperimentOptions& opt);
ExperimentResult experiment_cross_red(const ExperimentOptions& opt);
/// Dispatch by name (sweep, randomization, switch, ot-ablation, cross-red); writes the directory.
ExperimentResult run_experiment(const std::string& name, const ExperimentOptions& opt);

/// Held-out switch targets: PSG draws disjoint from the training seeds.
std::vector<Scenario> switch_targets(const TrainConfig& cfg, int count);

}  // namespace gacd

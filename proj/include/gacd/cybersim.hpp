#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gacd/rng.hpp"
#include "gacd/scenario.hpp"

namespace gacd {

enum class Compromise { None, User, Privileged };
enum class Activity { None, Scan, Exploit, Unknown };
enum class ObservedCompromise { No, Unknown, User, Privileged };
enum class RedKind { BLine, Meander };
enum class BlueKind { Sleep, Analyse, Remove, Restore, DeployDecoy };
enum class RedActionKind { Sleep, Scan, Exploit, Escalate, Impact };

inline constexpr int kBlueKindCount = 5;

std::string to_string(Activity a);
std::string to_string(ObservedCompromise c);
std::string to_string(RedKind k);
std::string to_string(BlueKind k);
std::string to_string(RedActionKind k);
RedKind red_kind_from_string(const std::string& s);

struct BlueAction {
  BlueKind kind = BlueKind::Sleep;
  int target = -1;  // host index; ignored for Sleep
  bool operator==(const BlueAction&) const = default;
};

struct RedAction {
  RedActionKind kind = RedActionKind::Sleep;
  int target = -1;
  bool operator==(const RedAction&) const = default;
};

struct Decoy {
  int source = -1;  // host index
  int target = -1;  // host index the decoy protects
  bool sprung = false;
  bool operator==(const Decoy&) const = default;
};

struct HostState {
  Compromise compromise = Compromise::None;
  bool known_to_red = false;
  bool scanned_by_red = false;
  bool detected = false;  // blue has seen evidence of compromise
  // Per-step fields, cleared at the start of every step.
  Activity activity = Activity::None;
  bool analysed = false;
  bool restored = false;
  bool operator==(const HostState&) const = default;
};

/// Ground-truth simulator state.
struct WorldState {
  std::vector<HostState> hosts;
  std::vector<Decoy> decoys;  // live and sprung
  int red_position = -1;
  int step_index = 0;
  int impacts_this_step = 0;
  std::vector<int> explored_subnets;  // Meander memory, in visit order
  RedAction last_red;
  bool truncated = false;
  bool failed = false;
  Rng rng;

  bool has_live_decoy(int host) const;
  bool operator==(const WorldState&) const = default;
};

struct ObservationRow {
  int subnet = -1;
  int host = -1;
  Activity activity = Activity::None;
  ObservedCompromise compromised = ObservedCompromise::No;
  bool operator==(const ObservationRow&) const = default;
};

/// Blue agent's partial view: one row per host plus its own live decoys.
struct Observation {
  std::vector<ObservationRow> rows;
  std::vector<Decoy> decoys;
  bool operator==(const Observation&) const = default;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;             // raw
  double normalized_reward = 0.0;  // scaled to the reference range
  bool terminated = false;
  bool truncated = false;
  bool failure = false;  // invalid blue action
  RedAction red;
};

/// Per-step penalties, shaped after the reference challenge scoring.
struct RewardTable {
  double user_compromised_host = -0.1;
  double privileged_enterprise_server = -1.0;
  double impact = -10.0;
  double restore = -1.0;
  double deploy_decoy = 0.0;
};

struct SimConfig {
  double exploit_success = 0.9;
  double exploit_detect = 0.95;
  double p_green = 0.25;
  int max_steps = 100;
  double failure_penalty = -1500.0;
  bool red_enabled = true;
  RewardTable reward;
};

/// Index structure over a Scenario.
class Topology {
 public:
  explicit Topology(Scenario s);

  const Scenario& scenario() const { return scenario_; }
  int num_hosts() const { return static_cast<int>(host_subnet_.size()); }
  int num_subnets() const { return static_cast<int>(subnet_hosts_.size()); }
  int host_subnet(int h) const { return host_subnet_[static_cast<std::size_t>(h)]; }
  const std::vector<int>& subnet_hosts(int s) const { return subnet_hosts_[static_cast<std::size_t>(s)]; }
  const std::vector<int>& subnet_out(int s) const { return subnet_out_[static_cast<std::size_t>(s)]; }
  bool subnet_edge(int from, int to) const;

  int operational_server() const { return op_server_; }
  int red_start() const { return red_start_; }
  int blue_host() const { return blue_host_; }
  int operational_subnet() const { return op_subnet_; }
  int enterprise_subnet() const { return ent_subnet_; }
  bool is_enterprise_server(int h) const;
  const std::vector<int>& green_candidates() const { return green_candidates_; }

  /// Shortest directed subnet path from red's start subnet to the operational subnet.
  const std::vector<int>& bline_path() const { return bline_path_; }
  /// One pivot host per path subnet; first is red's start, last the operational server.
  const std::vector<int>& bline_pivots() const { return bline_pivots_; }

  /// Scale factor mapping this topology's rewards onto the reference range.
  double reward_scale(const RewardTable& table) const;

 private:
  Scenario scenario_;
  std::vector<int> host_subnet_;
  std::vector<std::vector<int>> subnet_hosts_;
  std::vector<std::vector<int>> subnet_out_;
  std::vector<int> green_candidates_;
  std::vector<int> bline_path_;
  std::vector<int> bline_pivots_;
  int op_server_ = -1, red_start_ = -1, blue_host_ = -1, op_subnet_ = -1, ent_subnet_ = -1;
};

/// Can red act on host h from its current footholds?
bool red_can_reach(const WorldState& state, const Topology& topo, int h);

RedAction red_bline_policy(const WorldState& state, const Topology& topo);

struct MeanderDecision {
  RedAction action;
  std::optional<int> newly_explored;  // subnet appended to explored_subnets
};
MeanderDecision red_meander_policy(const WorldState& state, const Topology& topo, Rng& rng);

/// Host whose activity is set to Scan by benign traffic this step, if any.
std::optional<int> green_policy(const Topology& topo, double p_green, Rng& rng);

/// Raw reward of a transition. `prev` is unused by the current table but part of the contract.
double compute_reward(const WorldState& prev, const WorldState& next, const BlueAction& blue,
                      const Topology& topo, const RewardTable& table);

double normalize_reward(double raw, const Scenario& s, const RewardTable& table = {});

Observation observe(const WorldState& state, const Topology& topo);

/// Initial state and observation for an episode.
std::pair<WorldState, Observation> reset(const Topology& topo, RedKind red, std::uint64_t seed);

class Environment {
 public:
  Environment(Scenario scenario, RedKind red, SimConfig config = {});

  Observation reset(std::uint64_t seed);
  StepResult step(const BlueAction& blue);

  /// Replace the live network mid-episode. Host state is carried over by index;
  /// decoys are dropped; red keeps its foothold index if it exists.
  Observation switch_scenario(Scenario next);

  const WorldState& state() const { return state_; }
  const Topology& topology() const { return *topo_; }
  std::shared_ptr<const Topology> topology_ptr() const { return topo_; }
  const SimConfig& config() const { return config_; }
  RedKind red_kind() const { return red_; }
  bool done() const { return state_.truncated; }
  bool valid_action(const BlueAction& blue) const;

 private:
  void apply_red(const RedAction& action);
  void refresh_red_knowledge();

  std::shared_ptr<const Topology> topo_;
  RedKind red_;
  SimConfig config_;
  WorldState state_;
};

/// Tab-separated trace line: step, blue_kind, blue_target, red_action, raw, normalized, truncated.
std::string trace_line(int step, const BlueAction& blue, const StepResult& r, const Topology& topo);

}  // namespace gacd

#include "gacd/cybersim.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace gacd {

std::string to_string(Activity a) {
  switch (a) {
    case Activity::None: return "None";
    case Activity::Scan: return "Scan";
    case Activity::Exploit: return "Exploit";
    case Activity::Unknown: return "Unknown";
  }
  return "?";
}

std::string to_string(ObservedCompromise c) {
  switch (c) {
    case ObservedCompromise::No: return "No";
    case ObservedCompromise::Unknown: return "Unknown";
    case ObservedCompromise::User: return "User";
    case ObservedCompromise::Privileged: return "Privileged";
  }
  return "?";
}

std::string to_string(RedKind k) { return k == RedKind::BLine ? "bline" : "meander"; }

RedKind red_kind_from_string(const std::string& s) {
  if (s == "bline" || s == "BLine" || s == "b-line") return RedKind::BLine;
  if (s == "meander" || s == "Meander") return RedKind::Meander;
  throw std::invalid_argument("unknown red agent '" + s + "'");
}

std::string to_string(BlueKind k) {
  switch (k) {
    case BlueKind::Sleep: return "Sleep";
    case BlueKind::Analyse: return "Analyse";
    case BlueKind::Remove: return "Remove";
    case BlueKind::Restore: return "Restore";
    case BlueKind::DeployDecoy: return "DeployDecoy";
  }
  return "?";
}

std::string to_string(RedActionKind k) {
  switch (k) {
    case RedActionKind::Sleep: return "Sleep";
    case RedActionKind::Scan: return "Scan";
    case RedActionKind::Exploit: return "Exploit";
    case RedActionKind::Escalate: return "Escalate";
    case RedActionKind::Impact: return "Impact";
  }
  return "?";
}

bool WorldState::has_live_decoy(int host) const {
  return std::any_of(decoys.begin(), decoys.end(),
                     [&](const Decoy& d) { return d.target == host && !d.sprung; });
}

Topology::Topology(Scenario s) : scenario_(std::move(s)) {
  if (auto v = validate(scenario_); !v.empty())
    throw std::invalid_argument("invalid scenario: " + v.front());
  const auto& sc = scenario_;
  subnet_hosts_.resize(sc.subnets.size());
  subnet_out_.resize(sc.subnets.size());
  for (std::size_t h = 0; h < sc.hosts.size(); ++h) {
    const int si = static_cast<int>(*sc.subnet_index(sc.hosts[h].subnet));
    host_subnet_.push_back(si);
  }
  // Membership order follows the subnet's declared host list.
  for (std::size_t si = 0; si < sc.subnets.size(); ++si)
    for (const auto& id : sc.subnets[si].hosts) subnet_hosts_[si].push_back(static_cast<int>(*sc.host_index(id)));

  auto subnet_of = [&](const std::string& id) -> int {
    if (auto si = sc.subnet_index(id)) return static_cast<int>(*si);
    return host_subnet_[*sc.host_index(id)];
  };
  for (const auto& e : sc.acl_edges) {
    const int a = subnet_of(e.src), b = subnet_of(e.dst);
    if (a == b) continue;
    auto& out = subnet_out_[static_cast<std::size_t>(a)];
    if (std::find(out.begin(), out.end(), b) == out.end()) out.push_back(b);
  }
  for (auto& out : subnet_out_) std::sort(out.begin(), out.end());

  op_server_ = static_cast<int>(*sc.host_index(sc.operational_server));
  red_start_ = static_cast<int>(*sc.host_index(sc.red_start_host));
  blue_host_ = static_cast<int>(*sc.host_index(sc.blue_host));
  op_subnet_ = static_cast<int>(*sc.subnet_index(sc.operational_subnet));
  ent_subnet_ = static_cast<int>(*sc.subnet_index(sc.enterprise_subnet));

  for (std::size_t h = 0; h < sc.hosts.size(); ++h)
    if (sc.subnets[static_cast<std::size_t>(host_subnet_[h])].type == SubnetType::User)
      green_candidates_.push_back(static_cast<int>(h));
  if (green_candidates_.empty())
    for (int h = 0; h < num_hosts(); ++h) green_candidates_.push_back(h);

  // BFS over directed subnet links, neighbours in index order.
  const int start = host_subnet(red_start_);
  std::vector<int> parent(sc.subnets.size(), -2);
  std::queue<int> q;
  q.push(start);
  parent[static_cast<std::size_t>(start)] = -1;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v : subnet_out(u))
      if (parent[static_cast<std::size_t>(v)] == -2) {
        parent[static_cast<std::size_t>(v)] = u;
        q.push(v);
      }
  }
  if (parent[static_cast<std::size_t>(op_subnet_)] == -2) {
    bline_path_ = {start};  // operational subnet unreachable through directed links
  } else {
    for (int v = op_subnet_; v != -1; v = parent[static_cast<std::size_t>(v)]) bline_path_.push_back(v);
    std::reverse(bline_path_.begin(), bline_path_.end());
  }
  bline_pivots_.push_back(red_start_);
  for (std::size_t i = 1; i + 1 < bline_path_.size(); ++i) {
    const auto& members = subnet_hosts(bline_path_[i]);
    auto it = std::find_if(members.begin(), members.end(),
                           [&](int h) { return sc.hosts[static_cast<std::size_t>(h)].type == HostType::Server; });
    bline_pivots_.push_back(it != members.end() ? *it : members.front());
  }
  if (bline_path_.back() == op_subnet_ && op_server_ != red_start_) bline_pivots_.push_back(op_server_);
}

bool Topology::subnet_edge(int from, int to) const {
  const auto& out = subnet_out(from);
  return std::binary_search(out.begin(), out.end(), to);
}

bool Topology::is_enterprise_server(int h) const {
  return host_subnet(h) == ent_subnet_ &&
         scenario_.hosts[static_cast<std::size_t>(h)].type == HostType::Server;
}

double Topology::reward_scale(const RewardTable& table) const {
  (void)table;  // both numerator and denominator carry |impact|
  return 1.0 / static_cast<double>(operational_server_count(scenario_));
}

bool red_can_reach(const WorldState& state, const Topology& topo, int h) {
  if (h == topo.red_start()) return true;
  const int target_subnet = topo.host_subnet(h);
  for (int other = 0; other < topo.num_hosts(); ++other) {
    if (state.hosts[static_cast<std::size_t>(other)].compromise == Compromise::None) continue;
    const int s = topo.host_subnet(other);
    if (s == target_subnet || topo.subnet_edge(s, target_subnet)) return true;
  }
  return false;
}

namespace {

RedAction advance_on(const WorldState& state, const Topology& topo, int h, Compromise required) {
  const auto& hs = state.hosts[static_cast<std::size_t>(h)];
  if (hs.compromise == Compromise::None) {
    if (h == topo.red_start()) return {RedActionKind::Exploit, h};
    if (!hs.scanned_by_red) return {RedActionKind::Scan, h};
    return {RedActionKind::Exploit, h};
  }
  if (required == Compromise::Privileged && hs.compromise == Compromise::User)
    return {RedActionKind::Escalate, h};
  return {RedActionKind::Sleep, -1};
}

}  // namespace

RedAction red_bline_policy(const WorldState& state, const Topology& topo) {
  const int op = topo.operational_server();
  if (state.hosts[static_cast<std::size_t>(op)].compromise == Compromise::Privileged)
    return {RedActionKind::Impact, op};
  const auto& pivots = topo.bline_pivots();
  for (std::size_t i = 0; i < pivots.size(); ++i) {
    const int h = pivots[i];
    // The start foothold only needs user access unless it is the impact target.
    const Compromise required = (i == 0 && h != op) ? Compromise::User : Compromise::Privileged;
    const Compromise have = state.hosts[static_cast<std::size_t>(h)].compromise;
    if (have == Compromise::Privileged || (required == Compromise::User && have != Compromise::None)) continue;
    return advance_on(state, topo, h, required);
  }
  return {RedActionKind::Sleep, -1};
}

MeanderDecision red_meander_policy(const WorldState& state, const Topology& topo, Rng& rng) {
  const int op = topo.operational_server();
  if (state.hosts[static_cast<std::size_t>(op)].compromise == Compromise::Privileged)
    return {{RedActionKind::Impact, op}, std::nullopt};
  std::vector<int> explored = state.explored_subnets;
  if (explored.empty()) explored.push_back(topo.host_subnet(topo.red_start()));
  for (int s : explored)
    for (int h : topo.subnet_hosts(s))
      if (state.hosts[static_cast<std::size_t>(h)].compromise != Compromise::Privileged)
        return {advance_on(state, topo, h, Compromise::Privileged), std::nullopt};

  std::vector<int> frontier;
  for (int s = 0; s < topo.num_subnets(); ++s) {
    if (std::find(explored.begin(), explored.end(), s) != explored.end()) continue;
    if (std::any_of(explored.begin(), explored.end(), [&](int e) { return topo.subnet_edge(e, s); }))
      frontier.push_back(s);
  }
  if (frontier.empty()) return {{RedActionKind::Sleep, -1}, std::nullopt};
  const int next = frontier[rng.index(frontier.size())];
  const int first = topo.subnet_hosts(next).front();
  return {advance_on(state, topo, first, Compromise::Privileged), next};
}

std::optional<int> green_policy(const Topology& topo, double p_green, Rng& rng) {
  if (p_green <= 0.0) return std::nullopt;
  if (!rng.bernoulli(p_green)) return std::nullopt;
  const auto& c = topo.green_candidates();
  return c[rng.index(c.size())];
}

double compute_reward(const WorldState& prev, const WorldState& next, const BlueAction& blue,
                      const Topology& topo, const RewardTable& table) {
  (void)prev;
  double r = 0.0;
  for (int h = 0; h < topo.num_hosts(); ++h) {
    const Compromise c = next.hosts[static_cast<std::size_t>(h)].compromise;
    if (c == Compromise::None) continue;
    if (c == Compromise::Privileged && topo.is_enterprise_server(h))
      r += table.privileged_enterprise_server;
    else
      r += table.user_compromised_host;
  }
  r += table.impact * next.impacts_this_step;
  if (blue.kind == BlueKind::Restore) r += table.restore;
  if (blue.kind == BlueKind::DeployDecoy) r += table.deploy_decoy;
  return r;
}

double normalize_reward(double raw, const Scenario& s, const RewardTable& table) {
  const double reference = std::abs(table.impact) * 1.0;  // one operational server in the reference net
  const double own = std::abs(table.impact) * operational_server_count(s);
  if (own <= 0.0) throw std::invalid_argument("normalize_reward: scenario max penalty must be positive");
  return raw * (reference / own);
}

Observation observe(const WorldState& state, const Topology& topo) {
  Observation obs;
  obs.rows.reserve(state.hosts.size());
  for (int h = 0; h < topo.num_hosts(); ++h) {
    const auto& hs = state.hosts[static_cast<std::size_t>(h)];
    ObservationRow row;
    row.subnet = topo.host_subnet(h);
    row.host = h;
    row.activity = hs.activity;
    if (hs.analysed) {
      row.compromised = hs.compromise == Compromise::None       ? ObservedCompromise::No
                        : hs.compromise == Compromise::User     ? ObservedCompromise::User
                                                                : ObservedCompromise::Privileged;
    } else if (hs.compromise != Compromise::None && hs.detected) {
      row.compromised = ObservedCompromise::Unknown;
    }
    obs.rows.push_back(row);
  }
  for (const auto& d : state.decoys)
    if (!d.sprung) obs.decoys.push_back(d);
  return obs;
}

namespace {

void mark_known(WorldState& state, const Topology& topo) {
  for (int h = 0; h < topo.num_hosts(); ++h)
    if (!state.hosts[static_cast<std::size_t>(h)].known_to_red && red_can_reach(state, topo, h))
      state.hosts[static_cast<std::size_t>(h)].known_to_red = true;
}

WorldState initial_state(const Topology& topo, std::uint64_t seed) {
  WorldState st;
  st.hosts.resize(static_cast<std::size_t>(topo.num_hosts()));
  st.rng = Rng(seed);
  st.red_position = topo.red_start();
  st.hosts[static_cast<std::size_t>(topo.red_start())].compromise = Compromise::User;
  st.explored_subnets = {topo.host_subnet(topo.red_start())};
  mark_known(st, topo);
  return st;
}

}  // namespace

std::pair<WorldState, Observation> reset(const Topology& topo, RedKind red, std::uint64_t seed) {
  (void)red;
  WorldState st = initial_state(topo, seed);
  Observation obs = observe(st, topo);
  return {std::move(st), std::move(obs)};
}

Environment::Environment(Scenario scenario, RedKind red, SimConfig config)
    : topo_(std::make_shared<const Topology>(std::move(scenario))), red_(red), config_(config) {
  state_ = initial_state(*topo_, 0);
}

Observation Environment::reset(std::uint64_t seed) {
  state_ = initial_state(*topo_, seed);
  // Without red there is no starting foothold either.
  if (!config_.red_enabled) state_.hosts[static_cast<std::size_t>(state_.red_position)].compromise = Compromise::None;
  return observe(state_, *topo_);
}

bool Environment::valid_action(const BlueAction& blue) const {
  if (blue.kind == BlueKind::Sleep) return true;
  if (blue.target < 0 || blue.target >= topo_->num_hosts()) return false;
  if (blue.kind == BlueKind::DeployDecoy && state_.has_live_decoy(blue.target)) return false;
  return true;
}

void Environment::refresh_red_knowledge() { mark_known(state_, *topo_); }

void Environment::apply_red(const RedAction& action) {
  auto& st = state_;
  const int h = action.target;
  if (action.kind == RedActionKind::Sleep || h < 0) return;
  auto& hs = st.hosts[static_cast<std::size_t>(h)];
  if (!red_can_reach(st, *topo_, h)) return;
  switch (action.kind) {
    case RedActionKind::Scan:
      hs.scanned_by_red = true;
      hs.known_to_red = true;
      hs.activity = Activity::Scan;
      break;
    case RedActionKind::Exploit: {
      if (hs.restored) break;
      auto decoy = std::find_if(st.decoys.begin(), st.decoys.end(),
                                [&](const Decoy& d) { return d.target == h && !d.sprung; });
      if (decoy != st.decoys.end()) {
        decoy->sprung = true;
        hs.activity = Activity::Exploit;
        break;
      }
      const bool success = st.rng.bernoulli(config_.exploit_success);
      const bool seen = st.rng.bernoulli(config_.exploit_detect);
      if (seen) hs.activity = Activity::Exploit;
      if (success) {
        if (hs.compromise == Compromise::None) hs.compromise = Compromise::User;
        if (seen) hs.detected = true;
        st.red_position = h;
      }
      break;
    }
    case RedActionKind::Escalate:
      if (hs.restored || hs.compromise == Compromise::None) break;
      hs.compromise = Compromise::Privileged;
      st.red_position = h;
      break;
    case RedActionKind::Impact:
      if (h == topo_->operational_server() && hs.compromise == Compromise::Privileged) {
        ++st.impacts_this_step;
        hs.activity = Activity::Unknown;
      }
      break;
    case RedActionKind::Sleep: break;
  }
}

StepResult Environment::step(const BlueAction& blue) {
  if (state_.truncated) throw std::logic_error("step called on a finished episode");
  const WorldState prev = state_;
  auto& st = state_;
  for (auto& hs : st.hosts) {
    hs.activity = Activity::None;
    hs.analysed = false;
    hs.restored = false;
  }
  st.impacts_this_step = 0;

  StepResult result;
  if (!valid_action(blue)) {
    st.step_index++;
    st.truncated = true;
    st.failed = true;
    result.reward = config_.failure_penalty;
    result.normalized_reward = config_.failure_penalty;
    result.truncated = true;
    result.failure = true;
    result.observation = observe(st, *topo_);
    return result;
  }

  if (blue.kind != BlueKind::Sleep) {
    auto& hs = st.hosts[static_cast<std::size_t>(blue.target)];
    switch (blue.kind) {
      case BlueKind::Analyse:
        hs.analysed = true;
        if (hs.compromise != Compromise::None) hs.detected = true;
        break;
      case BlueKind::Remove:
        // Privileged footholds survive Remove; only Restore clears them.
        if (hs.compromise == Compromise::User) {
          hs.compromise = Compromise::None;
          hs.detected = false;
        }
        break;
      case BlueKind::Restore:
        hs.compromise = Compromise::None;
        hs.detected = false;
        hs.scanned_by_red = false;
        hs.restored = true;
        break;
      case BlueKind::DeployDecoy:
        st.decoys.push_back({topo_->blue_host(), blue.target, false});
        break;
      case BlueKind::Sleep: break;
    }
  }

  if (auto g = green_policy(*topo_, config_.p_green, st.rng)) {
    auto& hs = st.hosts[static_cast<std::size_t>(*g)];
    if (hs.activity == Activity::None) hs.activity = Activity::Scan;
  }

  RedAction red{RedActionKind::Sleep, -1};
  if (config_.red_enabled) {
    if (red_ == RedKind::BLine) {
      red = red_bline_policy(st, *topo_);
    } else {
      auto decision = red_meander_policy(st, *topo_, st.rng);
      red = decision.action;
      if (decision.newly_explored) st.explored_subnets.push_back(*decision.newly_explored);
    }
    apply_red(red);
    refresh_red_knowledge();
  }
  st.last_red = red;
  st.step_index++;

  result.red = red;
  result.reward = compute_reward(prev, st, blue, *topo_, config_.reward);
  result.normalized_reward = normalize_reward(result.reward, topo_->scenario(), config_.reward);
  if (st.step_index >= config_.max_steps) st.truncated = true;
  result.truncated = st.truncated;
  result.observation = observe(st, *topo_);
  return result;
}

Observation Environment::switch_scenario(Scenario next) {
  auto topo = std::make_shared<const Topology>(std::move(next));
  WorldState st;
  st.hosts.resize(static_cast<std::size_t>(topo->num_hosts()));
  const std::size_t keep = std::min(st.hosts.size(), state_.hosts.size());
  for (std::size_t h = 0; h < keep; ++h) {
    st.hosts[h] = state_.hosts[h];
    st.hosts[h].activity = Activity::None;
    st.hosts[h].analysed = false;
    st.hosts[h].restored = false;
  }
  st.red_position = state_.red_position < topo->num_hosts() ? state_.red_position : topo->red_start();
  auto& foothold = st.hosts[static_cast<std::size_t>(st.red_position)];
  if (config_.red_enabled && foothold.compromise == Compromise::None) foothold.compromise = Compromise::User;
  st.step_index = state_.step_index;
  st.rng = state_.rng;
  st.explored_subnets.push_back(topo->host_subnet(st.red_position));
  for (int h = 0; h < topo->num_hosts(); ++h) {
    const int s = topo->host_subnet(h);
    if (st.hosts[static_cast<std::size_t>(h)].compromise != Compromise::None &&
        std::find(st.explored_subnets.begin(), st.explored_subnets.end(), s) == st.explored_subnets.end())
      st.explored_subnets.push_back(s);
  }
  st.truncated = state_.truncated;
  topo_ = std::move(topo);
  state_ = std::move(st);
  refresh_red_knowledge();
  return observe(state_, *topo_);
}

std::string trace_line(int step, const BlueAction& blue, const StepResult& r, const Topology& topo) {
  std::ostringstream os;
  os.precision(17);
  auto host_name = [&](int h) -> std::string {
    if (h < 0 || h >= topo.num_hosts()) return h < 0 ? "-" : "#" + std::to_string(h);
    return topo.scenario().hosts[static_cast<std::size_t>(h)].id;
  };
  os << step << '\t' << to_string(blue.kind) << '\t'
     << (blue.kind == BlueKind::Sleep ? std::string("-") : host_name(blue.target)) << '\t'
     << to_string(r.red.kind) << ':' << host_name(r.red.target) << '\t' << r.reward << '\t'
     << r.normalized_reward << '\t' << (r.truncated ? 1 : 0);
  return os.str();
}

}  // namespace gacd

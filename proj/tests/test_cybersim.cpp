#include <doctest.h>

#include <cmath>
#include <map>
#include <queue>
#include <set>

#include "gacd/cybersim.hpp"

using namespace gacd;

namespace {

int host(const Scenario& s, const std::string& id) { return static_cast<int>(*s.host_index(id)); }

// Reward oracle recomputed from the published state after each step.
double oracle_reward(const WorldState& st, const Scenario& s, const BlueAction& blue) {
  double r = 0.0;
  for (std::size_t h = 0; h < st.hosts.size(); ++h) {
    const auto c = st.hosts[h].compromise;
    if (c == Compromise::None) continue;
    const auto& hs = s.hosts[h];
    const bool ent_server = hs.subnet == s.enterprise_subnet && hs.type == HostType::Server;
    r += (c == Compromise::Privileged && ent_server) ? -1.0 : -0.1;
  }
  r += -10.0 * st.impacts_this_step;
  if (blue.kind == BlueKind::Restore) r -= 1.0;
  return r;
}

// Shortest subnet path by BFS over directed ACL links (host endpoints folded into their subnets).
std::vector<std::string> subnet_path(const Scenario& s, const std::string& from, const std::string& to) {
  std::map<std::string, std::string> hs;
  for (const auto& h : s.hosts) hs[h.id] = h.subnet;
  auto fold = [&](const std::string& id) { return hs.count(id) ? hs[id] : id; };
  std::map<std::string, std::set<std::string>> out;
  for (const auto& e : s.acl_edges) out[fold(e.src)].insert(fold(e.dst));
  std::map<std::string, std::string> parent{{from, ""}};
  std::queue<std::string> q;
  q.push(from);
  while (!q.empty()) {
    auto u = q.front();
    q.pop();
    for (const auto& v : out[u])
      if (!parent.count(v)) {
        parent[v] = u;
        q.push(v);
      }
  }
  std::vector<std::string> path;
  for (std::string v = to; !v.empty(); v = parent[v]) path.insert(path.begin(), v);
  return path;
}

Scenario three_op_servers() {
  Scenario s = vanilla_cc2();
  for (auto& h : s.hosts)
    if (h.id == "Op_Host0" || h.id == "Op_Host1") h.type = HostType::Server;
  return s;
}

}  // namespace

TEST_SUITE("cybersim") {
  TEST_CASE("reset on the reference network") {
    const Scenario s = vanilla_cc2();
    Environment env(s, RedKind::BLine);
    const Observation obs = env.reset(11);
    REQUIRE(obs.rows.size() == 13);
    for (const auto& row : obs.rows) {
      CHECK(row.activity == Activity::None);
      CHECK(row.compromised == ObservedCompromise::No);
    }
    const auto& st = env.state();
    for (int h = 0; h < 13; ++h)
      CHECK(st.hosts[static_cast<std::size_t>(h)].compromise ==
            (h == host(s, "User0") ? Compromise::User : Compromise::None));
    CHECK(st.step_index == 0);
    CHECK(st.red_position == host(s, "User0"));

    Environment env2(s, RedKind::BLine);
    env2.reset(11);
    CHECK(env.state() == env2.state());
  }

  TEST_CASE("reset scales to a thousand hosts") {
    Rng rng(1);
    const Scenario big = generate_erdos_renyi(10, 100, 0.3, rng);
    Environment env(big, RedKind::Meander);
    CHECK(env.reset(0).rows.size() == 1000);
    for (int t = 0; t < 5; ++t) env.step({BlueKind::Sleep, -1});
  }

  TEST_CASE("invalid actions cost -1500 and truncate") {
    const Scenario s = vanilla_cc2();
    Environment env(s, RedKind::BLine);
    env.reset(0);
    const StepResult r = env.step({BlueKind::Analyse, 99});
    CHECK(r.reward == -1500.0);
    CHECK(r.normalized_reward == -1500.0);
    CHECK(r.truncated);
    CHECK(r.failure);
    CHECK_THROWS_AS(env.step({BlueKind::Sleep, -1}), std::logic_error);

    env.reset(0);
    CHECK(env.step({BlueKind::DeployDecoy, host(s, "User2")}).reward == doctest::Approx(-0.1));
    const StepResult again = env.step({BlueKind::DeployDecoy, host(s, "User2")});
    CHECK(again.reward == -1500.0);
    CHECK(again.truncated);

    env.reset(0);
    CHECK(env.step({BlueKind::Restore, -1}).reward == -1500.0);
  }

  TEST_CASE("quiet network gives zero reward") {
    SimConfig cfg;
    cfg.red_enabled = false;
    cfg.p_green = 0.0;
    Scenario s = vanilla_cc2();
    Environment env(s, RedKind::BLine, cfg);
    env.reset(3);
    env.step({BlueKind::Restore, host(s, "User0")});  // clears the initial foothold
    for (int t = 1; t < 100; ++t) {
      const auto r = env.step({BlueKind::Sleep, -1});
      CHECK(r.reward == 0.0);
    }
    CHECK(env.done());
  }

  TEST_CASE("reward accounting matches the replay oracle") {
    for (RedKind red : {RedKind::BLine, RedKind::Meander}) {
      const Scenario s = vanilla_cc2();
      Environment env(s, red);
      env.reset(2024);
      double cumulative = 0.0, replay = 0.0;
      int steps = 0;
      while (!env.done()) {
        const BlueAction a{BlueKind::Sleep, -1};
        const auto r = env.step(a);
        cumulative += r.reward;
        replay += oracle_reward(env.state(), s, a);
        CHECK(r.reward == doctest::Approx(oracle_reward(env.state(), s, a)).epsilon(1e-12));
        ++steps;
      }
      CHECK(steps == 100);
      CHECK(cumulative == doctest::Approx(replay).epsilon(1e-12));
      CHECK(cumulative < 0.0);
    }
  }

  TEST_CASE("B-Line walks the shortest subnet path") {
    const Scenario s = vanilla_cc2();
    const Topology topo(s);
    auto [st, obs] = reset(topo, RedKind::BLine, 0);
    const RedAction first = red_bline_policy(st, topo);
    CHECK(first.kind == RedActionKind::Scan);
    const auto path = subnet_path(s, s.hosts[static_cast<std::size_t>(topo.red_start())].subnet, s.operational_subnet);
    REQUIRE(path.size() >= 2);
    CHECK(s.hosts[static_cast<std::size_t>(first.target)].subnet == path[1]);

    std::vector<std::string> topo_path;
    for (int sidx : topo.bline_path()) topo_path.push_back(s.subnets[static_cast<std::size_t>(sidx)].id);
    CHECK(topo_path == path);

    st.hosts[static_cast<std::size_t>(topo.operational_server())].compromise = Compromise::Privileged;
    const RedAction impact = red_bline_policy(st, topo);
    CHECK(impact.kind == RedActionKind::Impact);
    CHECK(impact.target == topo.operational_server());
  }

  TEST_CASE("exploiting a decoy fails and is always visible") {
    const Scenario s = vanilla_cc2();
    Environment env(s, RedKind::BLine);
    env.reset(5);
    const Topology& topo = env.topology();
    const int pivot = topo.bline_pivots().at(1);
    // Step 1: red scans the pivot while blue plants a decoy on it.
    auto r1 = env.step({BlueKind::DeployDecoy, pivot});
    CHECK(r1.red.kind == RedActionKind::Scan);
    CHECK(r1.observation.decoys.size() == 1);
    const int before = env.state().red_position;
    auto r2 = env.step({BlueKind::Sleep, -1});
    CHECK(r2.red.kind == RedActionKind::Exploit);
    CHECK(r2.red.target == pivot);
    CHECK(env.state().hosts[static_cast<std::size_t>(pivot)].compromise == Compromise::None);
    CHECK(env.state().red_position == before);
    CHECK(r2.observation.rows[static_cast<std::size_t>(pivot)].activity == Activity::Exploit);
    CHECK(r2.observation.decoys.empty());  // single use
  }

  TEST_CASE("Meander clears the user subnet before moving on") {
    const Scenario s = vanilla_cc2();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Environment env(s, RedKind::Meander);
      env.reset(seed);
      const int user_subnet = env.topology().host_subnet(env.topology().red_start());
      bool left = false;
      while (!env.done()) {
        const auto r = env.step({BlueKind::Sleep, -1});
        if (r.red.target < 0) continue;
        if (env.topology().host_subnet(r.red.target) != user_subnet) {
          if (!left) {
            for (int h : env.topology().subnet_hosts(user_subnet))
              CHECK(env.state().hosts[static_cast<std::size_t>(h)].compromise == Compromise::Privileged);
          }
          left = true;
        } else {
          CHECK(!left);
        }
      }
      CHECK(left);
    }
  }

  TEST_CASE("single subnet: Meander and B-Line touch the same hosts") {
    ScenarioSpec spec;
    spec.ns_lower = spec.ns_upper = 1;
    spec.nh_lower = 1;
    spec.nh_upper = 2;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      spec.seed = seed;
      const Scenario s = generate_scenario(spec);
      std::set<int> touched[2];
      int k = 0;
      for (RedKind red : {RedKind::BLine, RedKind::Meander}) {
        SimConfig cfg;
        cfg.p_green = 0.0;
        Environment env(s, red, cfg);
        env.reset(seed);
        touched[k].insert(env.topology().red_start());
        while (!env.done()) {
          const auto r = env.step({BlueKind::Sleep, -1});
          if (r.red.target >= 0) touched[k].insert(r.red.target);
        }
        ++k;
      }
      CHECK(touched[0] == touched[1]);
    }
  }

  TEST_CASE("green agent frequency") {
    const Topology topo(vanilla_cc2());
    Rng rng(8);
    int none = 0;
    for (int i = 0; i < 1000; ++i) none += green_policy(topo, 0.0, rng).has_value();
    CHECK(none == 0);
    int all = 0;
    for (int i = 0; i < 100; ++i) all += green_policy(topo, 1.0, rng).has_value();
    CHECK(all == 100);
    int hits = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      auto g = green_policy(topo, 0.25, rng);
      if (g) {
        ++hits;
        CHECK(topo.scenario().subnets[static_cast<std::size_t>(topo.host_subnet(*g))].type == SubnetType::User);
      }
    }
    const double sigma = std::sqrt(n * 0.25 * 0.75);
    CHECK(std::abs(hits - n * 0.25) <= 3.0 * sigma);
  }

  TEST_CASE("reward table entries") {
    const Scenario s = vanilla_cc2();
    const Topology topo(s);
    WorldState a;
    a.hosts.resize(13);
    WorldState b = a;
    CHECK(compute_reward(a, b, {BlueKind::Sleep, -1}, topo, {}) == 0.0);
    b.impacts_this_step = 1;
    CHECK(compute_reward(a, b, {BlueKind::Sleep, -1}, topo, {}) == -10.0);
    b.impacts_this_step = 0;
    CHECK(compute_reward(a, b, {BlueKind::Restore, 3}, topo, {}) == -1.0);
    b.hosts[static_cast<std::size_t>(host(s, "Enterprise1"))].compromise = Compromise::Privileged;
    b.hosts[static_cast<std::size_t>(host(s, "User3"))].compromise = Compromise::User;
    CHECK(compute_reward(a, b, {BlueKind::Sleep, -1}, topo, {}) == doctest::Approx(-1.1));
  }

  TEST_CASE("reward normalisation") {
    CHECK(normalize_reward(-5.0, vanilla_cc2()) == -5.0);
    const Scenario three = three_op_servers();
    CHECK(validate(three).empty());
    CHECK(operational_server_count(three) == 3);
    CHECK(normalize_reward(-30.0, three) == doctest::Approx(-10.0));
    CHECK(normalize_reward(0.0, three) == 0.0);
  }

  TEST_CASE("restore clears, knowledge is monotone, episodes stop at 100") {
    ScenarioSpec spec;
    spec.ns_lower = 2;
    spec.ns_upper = 4;
    spec.nh_lower = 6;
    spec.nh_upper = 14;
    Rng rng(77);
    for (int ep = 0; ep < 30; ++ep) {
      const Scenario s = generate_scenario(spec, rng);
      Environment env(s, ep % 2 ? RedKind::Meander : RedKind::BLine);
      env.reset(static_cast<std::uint64_t>(ep));
      const int nh = env.topology().num_hosts();
      int steps = 0;
      while (!env.done()) {
        const WorldState prev = env.state();
        BlueAction a{static_cast<BlueKind>(rng.index(4)), static_cast<int>(rng.index(static_cast<std::size_t>(nh)))};
        if (a.kind == BlueKind::Sleep) a.target = -1;
        env.step(a);
        ++steps;
        const auto& st = env.state();
        if (a.kind == BlueKind::Restore)
          CHECK(st.hosts[static_cast<std::size_t>(a.target)].compromise == Compromise::None);
        for (int h = 0; h < nh; ++h) {
          const auto& p = prev.hosts[static_cast<std::size_t>(h)];
          const auto& n = st.hosts[static_cast<std::size_t>(h)];
          const bool restored = a.kind == BlueKind::Restore && a.target == h;
          if (!restored) {
            if (p.known_to_red) CHECK(n.known_to_red);
            if (p.scanned_by_red) CHECK(n.scanned_by_red);
          }
        }
      }
      CHECK(steps == 100);
    }
  }

  TEST_CASE("same seed and actions give the same trace") {
    const Scenario s = vanilla_cc2();
    std::vector<std::string> traces[2];
    for (auto& trace : traces) {
      Environment env(s, RedKind::Meander);
      env.reset(31337);
      int t = 0;
      while (!env.done()) {
        const BlueAction a = (t % 7 == 3) ? BlueAction{BlueKind::Restore, t % 13} : BlueAction{BlueKind::Analyse, t % 13};
        trace.push_back(trace_line(t, a, env.step(a), env.topology()));
        ++t;
      }
    }
    CHECK(traces[0] == traces[1]);
    CHECK(traces[0].front().find('\t') != std::string::npos);
  }

  TEST_CASE("analyse reveals the true compromise level") {
    const Scenario s = vanilla_cc2();
    SimConfig cfg;
    cfg.p_green = 0.0;
    Environment env(s, RedKind::BLine, cfg);
    env.reset(0);
    const auto r = env.step({BlueKind::Analyse, host(s, "User0")});
    CHECK(r.observation.rows[static_cast<std::size_t>(host(s, "User0"))].compromised == ObservedCompromise::User);
  }

  TEST_CASE("mid-episode switch keeps the episode going") {
    const Scenario s = vanilla_cc2();
    Environment env(s, RedKind::BLine);
    env.reset(9);
    for (int t = 0; t < 50; ++t) env.step({BlueKind::Sleep, -1});
    ScenarioSpec spec;
    spec.seed = 4;
    const Scenario next = generate_scenario(spec);
    const Observation obs = env.switch_scenario(next);
    CHECK(obs.rows.size() == next.hosts.size());
    CHECK(env.state().step_index == 50);
    CHECK(env.state().decoys.empty());
    int steps = 0;
    while (!env.done()) {
      env.step({BlueKind::Sleep, -1});
      ++steps;
    }
    CHECK(steps == 50);
  }
}

#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "gacd/graphobs.hpp"
#include "test_util.hpp"

using namespace gacd;

namespace {

int host(const Scenario& s, const std::string& id) { return static_cast<int>(*s.host_index(id)); }

AttributedGraph vanilla_graph() {
  const Scenario s = vanilla_cc2();
  Environment env(s, RedKind::BLine);
  return observation_to_graph(env.reset(0), s);
}

std::vector<int> sorted_degrees(const AttributedGraph& g) {
  std::vector<int> d(static_cast<std::size_t>(g.num_nodes()), 0);
  for (const auto& e : g.edges) {
    d[static_cast<std::size_t>(e.src)]++;
    d[static_cast<std::size_t>(e.dst)]++;
  }
  std::sort(d.begin(), d.end());
  return d;
}

}  // namespace

TEST_SUITE("graphobs") {
  TEST_CASE("state bit codes") {
    using A = Activity;
    using C = ObservedCompromise;
    CHECK(encode_state_bits(A::None, C::No) == std::array<double, 4>{0, 0, 0, 0});
    CHECK(encode_state_bits(A::Exploit, C::User) == std::array<double, 4>{1, 0, 1, 0});
    std::set<std::array<double, 4>> codes;
    for (int a = 0; a < 4; ++a)
      for (int c = 0; c < 4; ++c) codes.insert(encode_state_bits(static_cast<A>(a), static_cast<C>(c)));
    CHECK(codes.size() == 16);
  }

  TEST_CASE("reference network graph") {
    const AttributedGraph g = vanilla_graph();
    CHECK(g.num_nodes() == 16);
    check_graph(g);
    int subnets = 0, hosts = 0;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      subnets += g.nodes[i].kind == NodeKind::Subnet;
      hosts += g.nodes[i].kind == NodeKind::Host;
      for (int k = 3; k < kFeatureDim; ++k) CHECK(g.features[i][static_cast<std::size_t>(k)] == 0.0);
    }
    CHECK(subnets == 3);
    CHECK(hosts == 13);
    // Every host<->subnet membership and every undirected ACL link appear as two directed edges.
    std::multiset<Edge> es(g.edges.begin(), g.edges.end());
    for (const auto& e : g.edges)
      if (!(g.nodes[static_cast<std::size_t>(e.src)].label == "Operational" ||
            g.nodes[static_cast<std::size_t>(e.dst)].label == "Operational"))
        CHECK(es.count({e.dst, e.src}) == 1);
  }

  TEST_CASE("decoy adds one node and two directed edges") {
    const Scenario s = vanilla_cc2();
    Environment env(s, RedKind::BLine);
    Observation obs = env.reset(0);
    const AttributedGraph base = observation_to_graph(obs, s);
    obs.decoys.push_back({host(s, "Op_Server0"), host(s, "User2"), false});
    const AttributedGraph g = observation_to_graph(obs, s);
    CHECK(g.num_nodes() == base.num_nodes() + 1);
    CHECK(g.edges.size() == base.edges.size() + 2);
    const int decoy = g.num_nodes() - 1;
    CHECK(g.nodes[static_cast<std::size_t>(decoy)].kind == NodeKind::Decoy);
    const int ns = static_cast<int>(s.subnets.size());
    const Edge in{ns + host(s, "Op_Server0"), decoy};
    const Edge out{decoy, ns + host(s, "User2")};
    CHECK(std::count(g.edges.begin(), g.edges.end(), in) == 1);
    CHECK(std::count(g.edges.begin(), g.edges.end(), out) == 1);
    CHECK(std::count(g.edges.begin(), g.edges.end(), Edge{decoy, in.src}) == 0);
  }

  TEST_CASE("Exploit/User row encodes 1010") {
    const Scenario s = vanilla_cc2();
    Environment env(s, RedKind::BLine);
    Observation obs = env.reset(0);
    const int h = host(s, "Enterprise2");
    obs.rows[static_cast<std::size_t>(h)].activity = Activity::Exploit;
    obs.rows[static_cast<std::size_t>(h)].compromised = ObservedCompromise::User;
    const AttributedGraph g = observation_to_graph(obs, s);
    const auto& f = g.features[static_cast<std::size_t>(static_cast<int>(s.subnets.size()) + h)];
    CHECK(f[3] == 1.0);
    CHECK(f[4] == 0.0);
    CHECK(f[5] == 1.0);
    CHECK(f[6] == 0.0);
  }

  TEST_CASE("observation errors") {
    const Scenario s = vanilla_cc2();
    Environment env(s, RedKind::BLine);
    Observation obs = env.reset(0);
    Observation extra = obs;
    extra.rows.push_back({0, 42, Activity::None, ObservedCompromise::No});
    CHECK_THROWS_AS(observation_to_graph(extra, s), std::invalid_argument);
    Observation missing = obs;
    missing.rows.pop_back();
    CHECK_THROWS_AS(observation_to_graph(missing, s), std::invalid_argument);
  }

  TEST_CASE("batching") {
    Rng rng(4);
    const AttributedGraph g1 = testutil::random_graph(5, rng);
    const AttributedGraph g2 = testutil::random_graph(7, rng);
    const BatchedGraph one = batch(std::vector<AttributedGraph>{g1});
    CHECK(one.unbatch(0) == g1);
    const BatchedGraph two = batch(std::vector<AttributedGraph>{g1, g2}, {10, 20});
    CHECK(two.num_nodes() == 12);
    CHECK(two.offsets == std::vector<int>{0, 5, 12});
    CHECK(two.env_ids == std::vector<int>{10, 20});
    for (const auto& e : two.edges) CHECK(two.graph_of(e.src) == two.graph_of(e.dst));
    CHECK(two.unbatch(1) == g2);
    CHECK_THROWS_AS(batch(std::vector<AttributedGraph>{}), std::invalid_argument);
  }

  TEST_CASE("permutations") {
    const AttributedGraph g = vanilla_graph();
    const int n = g.num_nodes();
    std::vector<int> id(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) id[static_cast<std::size_t>(i)] = i;
    CHECK(permute(g, id) == g);
    Rng rng(12);
    const auto sigma = testutil::random_permutation(n, rng);
    const auto tau = testutil::random_permutation(n, rng);
    CHECK(permute(permute(g, sigma), invert_permutation(sigma)) == g);
    CHECK(sorted_degrees(permute(g, sigma)) == sorted_degrees(g));
    std::vector<int> composed(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) composed[static_cast<std::size_t>(i)] = tau[static_cast<std::size_t>(sigma[static_cast<std::size_t>(i)])];
    CHECK(permute(permute(g, sigma), tau) == permute(g, composed));
    CHECK_THROWS_AS(permute(g, std::vector<int>(static_cast<std::size_t>(n), 0)), std::invalid_argument);
  }

  TEST_CASE("shortest paths") {
    AttributedGraph single;
    single.nodes.push_back({NodeKind::Host, "a", 0});
    single.features.push_back({0, 1, 0, 0, 0, 0, 0});
    CHECK(shortest_path_distances(single) == std::vector<std::vector<int>>{{0}});

    AttributedGraph path = single;
    path.nodes.push_back({NodeKind::Host, "b", 1});
    path.nodes.push_back({NodeKind::Host, "c", 2});
    path.features.resize(3, single.features[0]);
    path.edges = {{0, 1}, {1, 2}};
    CHECK(shortest_path_distances(path)[0][2] == 2);

    // Undirected skeleton: User0 -> User subnet -> Operational subnet (via the one-way
    // Operational->User link) -> Op_Server0 is 3 hops.
    const Scenario s = vanilla_cc2();
    const AttributedGraph g = vanilla_graph();
    const int ns = static_cast<int>(s.subnets.size());
    const auto d = shortest_path_distances(g);
    CHECK(d[static_cast<std::size_t>(ns + host(s, "User0"))][static_cast<std::size_t>(ns + host(s, "Op_Server0"))] == 3);
  }

  TEST_CASE("json round trip") {
    const AttributedGraph g = vanilla_graph();
    CHECK(graph_from_json(graph_to_json(g)) == g);
  }
}

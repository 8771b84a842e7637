#include "gacd/graphobs.hpp"

#include <algorithm>
#include <json.hpp>
#include <queue>
#include <stdexcept>

namespace gacd {

std::array<double, 4> encode_state_bits(Activity activity, ObservedCompromise compromised) {
  const int a = static_cast<int>(activity);
  const int c = static_cast<int>(compromised);
  return {static_cast<double>((a >> 1) & 1), static_cast<double>(a & 1), static_cast<double>((c >> 1) & 1),
          static_cast<double>(c & 1)};
}

namespace {

std::array<double, kFeatureDim> node_features(NodeKind kind, Activity a = Activity::None,
                                              ObservedCompromise c = ObservedCompromise::No) {
  std::array<double, kFeatureDim> f{};
  f[static_cast<std::size_t>(kind)] = 1.0;
  const auto bits = encode_state_bits(a, c);
  std::copy(bits.begin(), bits.end(), f.begin() + 3);
  return f;
}

}  // namespace

AttributedGraph observation_to_graph(const Observation& obs, const Scenario& scenario) {
  const int ns = static_cast<int>(scenario.subnets.size());
  const int nh = static_cast<int>(scenario.hosts.size());
  std::vector<const ObservationRow*> by_host(static_cast<std::size_t>(nh), nullptr);
  for (const auto& row : obs.rows) {
    if (row.host < 0 || row.host >= nh)
      throw std::invalid_argument("observation row for unknown host " + std::to_string(row.host));
    if (by_host[static_cast<std::size_t>(row.host)])
      throw std::invalid_argument("duplicate observation row for host " + std::to_string(row.host));
    by_host[static_cast<std::size_t>(row.host)] = &row;
  }
  for (int h = 0; h < nh; ++h)
    if (!by_host[static_cast<std::size_t>(h)])
      throw std::invalid_argument("observation missing host " + scenario.hosts[static_cast<std::size_t>(h)].id);

  AttributedGraph g;
  for (int s = 0; s < ns; ++s) {
    g.nodes.push_back({NodeKind::Subnet, scenario.subnets[static_cast<std::size_t>(s)].id, s});
    g.features.push_back(node_features(NodeKind::Subnet));
  }
  for (int h = 0; h < nh; ++h) {
    const auto& row = *by_host[static_cast<std::size_t>(h)];
    g.nodes.push_back({NodeKind::Host, scenario.hosts[static_cast<std::size_t>(h)].id, h});
    g.features.push_back(node_features(NodeKind::Host, row.activity, row.compromised));
  }
  for (int h = 0; h < nh; ++h) {
    const int s = static_cast<int>(*scenario.subnet_index(scenario.hosts[static_cast<std::size_t>(h)].subnet));
    g.edges.push_back({ns + h, s});
    g.edges.push_back({s, ns + h});
  }
  auto node_of = [&](const std::string& id) -> int {
    if (auto si = scenario.subnet_index(id)) return static_cast<int>(*si);
    if (auto hi = scenario.host_index(id)) return ns + static_cast<int>(*hi);
    throw std::invalid_argument("acl edge references unknown id " + id);
  };
  for (const auto& e : scenario.acl_edges) g.edges.push_back({node_of(e.src), node_of(e.dst)});
  for (const auto& d : obs.decoys) {
    if (d.sprung) continue;
    if (d.source < 0 || d.source >= nh || d.target < 0 || d.target >= nh)
      throw std::invalid_argument("decoy references unknown host");
    const int node = g.num_nodes();
    g.nodes.push_back({NodeKind::Decoy, "decoy:" + scenario.hosts[static_cast<std::size_t>(d.target)].id, d.target});
    g.features.push_back(node_features(NodeKind::Decoy));
    g.edges.push_back({ns + d.source, node});
    g.edges.push_back({node, ns + d.target});
  }
  return g;
}

void check_graph(const AttributedGraph& g) {
  if (g.features.size() != g.nodes.size()) throw std::logic_error("feature rows != node count");
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& f = g.features[i];
    int ones = 0;
    for (int k = 0; k < 3; ++k) ones += f[static_cast<std::size_t>(k)] == 1.0;
    if (ones != 1 || f[static_cast<std::size_t>(g.nodes[i].kind)] != 1.0)
      throw std::logic_error("node kind one-hot broken at row " + std::to_string(i));
    for (double v : f)
      if (v != 0.0 && v != 1.0) throw std::logic_error("non-binary feature at row " + std::to_string(i));
  }
  for (const auto& e : g.edges)
    if (e.src < 0 || e.dst < 0 || e.src >= g.num_nodes() || e.dst >= g.num_nodes())
      throw std::logic_error("edge index out of range");
}

int BatchedGraph::graph_of(int node) const {
  auto it = std::upper_bound(offsets.begin(), offsets.end(), node);
  return static_cast<int>(it - offsets.begin()) - 1;
}

AttributedGraph BatchedGraph::unbatch(int graph) const {
  const int lo = offsets[static_cast<std::size_t>(graph)];
  const int hi = offsets[static_cast<std::size_t>(graph) + 1];
  AttributedGraph g;
  g.nodes.assign(nodes.begin() + lo, nodes.begin() + hi);
  g.features.assign(features.begin() + lo, features.begin() + hi);
  for (const auto& e : edges)
    if (e.src >= lo && e.src < hi) g.edges.push_back({e.src - lo, e.dst - lo});
  return g;
}

BatchedGraph batch(const std::vector<const AttributedGraph*>& graphs, std::vector<int> env_ids) {
  if (graphs.empty()) throw std::invalid_argument("batch: empty graph list");
  BatchedGraph b;
  b.offsets.push_back(0);
  for (const AttributedGraph* g : graphs) {
    const int base = b.offsets.back();
    b.nodes.insert(b.nodes.end(), g->nodes.begin(), g->nodes.end());
    b.features.insert(b.features.end(), g->features.begin(), g->features.end());
    for (const auto& e : g->edges) b.edges.push_back({e.src + base, e.dst + base});
    b.offsets.push_back(base + g->num_nodes());
  }
  if (env_ids.empty())
    for (std::size_t i = 0; i < graphs.size(); ++i) env_ids.push_back(static_cast<int>(i));
  if (env_ids.size() != graphs.size()) throw std::invalid_argument("batch: env_ids size mismatch");
  b.env_ids = std::move(env_ids);
  return b;
}

BatchedGraph batch(const std::vector<AttributedGraph>& graphs, std::vector<int> env_ids) {
  std::vector<const AttributedGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  return batch(ptrs, std::move(env_ids));
}

std::vector<int> invert_permutation(const std::vector<int>& sigma) {
  std::vector<int> inv(sigma.size(), -1);
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const int t = sigma[i];
    if (t < 0 || t >= static_cast<int>(sigma.size()) || inv[static_cast<std::size_t>(t)] != -1)
      throw std::invalid_argument("permutation is not a bijection");
    inv[static_cast<std::size_t>(t)] = static_cast<int>(i);
  }
  return inv;
}

AttributedGraph permute(const AttributedGraph& g, const std::vector<int>& sigma) {
  if (static_cast<int>(sigma.size()) != g.num_nodes())
    throw std::invalid_argument("permutation size does not match node count");
  invert_permutation(sigma);  // bijection check
  AttributedGraph out;
  out.nodes.resize(g.nodes.size());
  out.features.resize(g.features.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    out.nodes[static_cast<std::size_t>(sigma[i])] = g.nodes[i];
    out.features[static_cast<std::size_t>(sigma[i])] = g.features[i];
  }
  out.edges.reserve(g.edges.size());
  for (const auto& e : g.edges)
    out.edges.push_back({sigma[static_cast<std::size_t>(e.src)], sigma[static_cast<std::size_t>(e.dst)]});
  return out;
}

std::vector<std::vector<int>> shortest_path_distances(const AttributedGraph& g) {
  const int n = g.num_nodes();
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (const auto& e : g.edges) {
    adj[static_cast<std::size_t>(e.src)].push_back(e.dst);
    adj[static_cast<std::size_t>(e.dst)].push_back(e.src);
  }
  std::vector<std::vector<int>> dist(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), kUnreachable));
  for (int s = 0; s < n; ++s) {
    auto& d = dist[static_cast<std::size_t>(s)];
    d[static_cast<std::size_t>(s)] = 0;
    std::queue<int> q;
    q.push(s);
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int v : adj[static_cast<std::size_t>(u)])
        if (d[static_cast<std::size_t>(v)] == kUnreachable) {
          d[static_cast<std::size_t>(v)] = d[static_cast<std::size_t>(u)] + 1;
          q.push(v);
        }
    }
  }
  return dist;
}

std::vector<int> in_degrees(const AttributedGraph& g) {
  std::vector<int> deg(g.nodes.size(), 0);
  for (const auto& e : g.edges) deg[static_cast<std::size_t>(e.dst)]++;
  return deg;
}

namespace {
const char* kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::Subnet: return "Subnet";
    case NodeKind::Host: return "Host";
    case NodeKind::Decoy: return "Decoy";
  }
  return "?";
}
}  // namespace

std::string graph_to_json(const AttributedGraph& g) {
  nlohmann::ordered_json j;
  j["nodes"] = nlohmann::ordered_json::array();
  for (const auto& n : g.nodes) j["nodes"].push_back({{"kind", kind_name(n.kind)}, {"label", n.label}, {"ref", n.ref}});
  j["edges"] = nlohmann::ordered_json::array();
  for (const auto& e : g.edges) j["edges"].push_back({e.src, e.dst});
  j["features"] = nlohmann::ordered_json::array();
  for (const auto& f : g.features) j["features"].push_back(f);
  return j.dump() + "\n";
}

AttributedGraph graph_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  AttributedGraph g;
  for (const auto& n : j.at("nodes")) {
    GraphNode node;
    const std::string kind = n.at("kind").get<std::string>();
    node.kind = kind == "Subnet" ? NodeKind::Subnet : kind == "Host" ? NodeKind::Host : NodeKind::Decoy;
    if (kind != "Subnet" && kind != "Host" && kind != "Decoy")
      throw std::invalid_argument("unknown node kind " + kind);
    node.label = n.value("label", std::string());
    node.ref = n.value("ref", -1);
    g.nodes.push_back(node);
  }
  for (const auto& e : j.at("edges")) g.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
  for (const auto& f : j.at("features")) {
    std::array<double, kFeatureDim> row{};
    if (f.size() != kFeatureDim) throw std::invalid_argument("feature rows must have 7 entries");
    for (std::size_t k = 0; k < kFeatureDim; ++k) row[k] = f.at(k).get<double>();
    g.features.push_back(row);
  }
  check_graph(g);
  return g;
}

}  // namespace gacd

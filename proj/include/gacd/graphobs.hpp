#pragma once

#include <array>
#include <limits>
#include <string>
#include <vector>

#include "gacd/cybersim.hpp"

namespace gacd {

enum class NodeKind { Subnet, Host, Decoy };

inline constexpr int kFeatureDim = 7;

struct GraphNode {
  NodeKind kind = NodeKind::Host;
  std::string label;  // subnet/host id, or "decoy:<target>"
  int ref = -1;       // subnet index, host index, or decoy target host index
  bool operator==(const GraphNode&) const = default;
};

struct Edge {
  int src = 0;
  int dst = 0;
  bool operator==(const Edge&) const = default;
  auto operator<=>(const Edge&) const = default;
};

/// Observation graph: nodes, directed edges, and an N x 7 binary feature matrix
/// laid out as [one-hot kind (3) | activity code (2) | compromised code (2)].
struct AttributedGraph {
  std::vector<GraphNode> nodes;
  std::vector<Edge> edges;
  std::vector<std::array<double, kFeatureDim>> features;

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  bool operator==(const AttributedGraph&) const = default;
};

/// Fixed 2-bit codes. Activity: None=00 Scan=01 Exploit=10 Unknown=11.
/// Compromised: No=00 Unknown=01 User=10 Privileged=11.
std::array<double, 4> encode_state_bits(Activity activity, ObservedCompromise compromised);

AttributedGraph observation_to_graph(const Observation& obs, const Scenario& scenario);

/// Throws if the feature layout or edge indices are inconsistent.
void check_graph(const AttributedGraph& g);

/// Multi-environment batch: concatenated nodes with per-graph offsets.
struct BatchedGraph {
  std::vector<GraphNode> nodes;
  std::vector<Edge> edges;  // global node indices
  std::vector<std::array<double, kFeatureDim>> features;
  std::vector<int> offsets;  // size = graphs + 1
  std::vector<int> env_ids;

  int num_graphs() const { return static_cast<int>(offsets.size()) - 1; }
  int num_nodes() const { return offsets.back(); }
  int graph_of(int node) const;
  AttributedGraph unbatch(int graph) const;
};

BatchedGraph batch(const std::vector<AttributedGraph>& graphs, std::vector<int> env_ids = {});
BatchedGraph batch(const std::vector<const AttributedGraph*>& graphs, std::vector<int> env_ids = {});

/// Relabel node i as sigma[i]. Throws std::invalid_argument if sigma is not a bijection.
AttributedGraph permute(const AttributedGraph& g, const std::vector<int>& sigma);

std::vector<int> invert_permutation(const std::vector<int>& sigma);

inline constexpr int kUnreachable = std::numeric_limits<int>::max();

/// BFS hop counts on the undirected skeleton; kUnreachable for disconnected pairs.
std::vector<std::vector<int>> shortest_path_distances(const AttributedGraph& g);

/// In-degree of every node over directed edges.
std::vector<int> in_degrees(const AttributedGraph& g);

std::string graph_to_json(const AttributedGraph& g);
AttributedGraph graph_from_json(const std::string& text);

}  // namespace gacd

#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gacd/graphobs.hpp"

namespace gacd {

/// Graph as a measure over (structure, feature) pairs.
struct MeasuredGraph {
  std::vector<double> weights;  // h, sums to 1
  Eigen::MatrixXd features;     // n x k
  Eigen::MatrixXd structure;    // n x n, symmetric, zero diagonal

  int size() const { return static_cast<int>(weights.size()); }
  void check() const;
};

using Coupling = Eigen::MatrixXd;

/// Hop distance on the undirected skeleton; disconnected pairs get n (the node count).
Eigen::MatrixXd structure_matrix(const AttributedGraph& g);

/// Uniform weights, hop-distance structure, raw 7-dim features.
MeasuredGraph to_measured(const AttributedGraph& g);

/// M_ij = Euclidean distance between feature rows.
Eigen::MatrixXd feature_cost_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// (L (x) pi)_ij = sum_kl |C1(i,k) - C2(j,l)| pi_kl.
Eigen::MatrixXd gw_tensor_product(const Eigen::MatrixXd& c1, const Eigen::MatrixXd& c2, const Eigen::MatrixXd& pi);

/// FGW objective at q = 1:  (1-alpha) <M, pi> + alpha sum_ijkl |C1(i,k) - C2(j,l)| pi_ij pi_kl.
/// Throws if pi has negative entries or its mass differs from 1 by more than 1e-6.
double fgw_cost(const Eigen::MatrixXd& m, const Eigen::MatrixXd& c1, const Eigen::MatrixXd& c2,
                const Coupling& pi, double alpha);

/// Same objective with a full admissibility check against the graphs' weights.
double fgw_cost(const MeasuredGraph& g1, const MeasuredGraph& g2, const Coupling& pi, double alpha);

bool is_admissible(const Coupling& pi, const std::vector<double>& h, const std::vector<double>& g,
                   double tol = 1e-6);

struct FgwOptions {
  int max_iterations = 200;
  double gap_tolerance = 1e-12;
  int random_starts = 8;  // extra permutation starts for same-size uniform problems
  int local_search_max_nodes = 16;
  int vertex_starts = 4096;  // unequal sizes: cheapest transport-polytope vertices used as extra starts
  long vertex_enumeration_limit = 20000;  // max row-order x column-order pairs to enumerate
};

struct FgwResult {
  double cost = 0.0;
  Coupling coupling;
  int iterations = 0;
  std::vector<double> objective_trace;  // conditional-gradient iterates of the winning start
};

/// Conditional-gradient (Frank-Wolfe) minimisation of the FGW objective over Pi(h, g),
/// multi-started; the returned cost is never above the independent coupling's cost.
FgwResult fgw_distance(const MeasuredGraph& g1, const MeasuredGraph& g2, double alpha,
                       const FgwOptions& options = {});

FgwResult fgw_distance(const AttributedGraph& g1, const AttributedGraph& g2, double alpha,
                       const FgwOptions& options = {});

/// Exhaustive minimum over permutation couplings. Same size n <= 6, uniform weights only.
double fgw_bruteforce(const MeasuredGraph& g1, const MeasuredGraph& g2, double alpha);

/// One conditional-gradient run from a given start; exposed for monotonicity tests.
FgwResult fgw_conditional_gradient(const MeasuredGraph& g1, const MeasuredGraph& g2, double alpha,
                                   const Coupling& start, const FgwOptions& options = {});

}  // namespace gacd

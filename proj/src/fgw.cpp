#include "gacd/fgw.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gacd/rng.hpp"
#include "gacd/transport.hpp"

namespace gacd {

void MeasuredGraph::check() const {
  const auto n = static_cast<Eigen::Index>(weights.size());
  if (n == 0) throw std::invalid_argument("empty graph");
  if (features.rows() != n || structure.rows() != n || structure.cols() != n)
    throw std::invalid_argument("MeasuredGraph: inconsistent sizes");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("MeasuredGraph: weights must sum to 1");
  for (double w : weights)
    if (w < 0.0) throw std::invalid_argument("MeasuredGraph: negative weight");
  if ((structure - structure.transpose()).cwiseAbs().maxCoeff() > 1e-12 || structure.diagonal().cwiseAbs().maxCoeff() > 0.0)
    throw std::invalid_argument("MeasuredGraph: structure must be symmetric with zero diagonal");
}

Eigen::MatrixXd structure_matrix(const AttributedGraph& g) {
  const int n = g.num_nodes();
  const auto d = shortest_path_distances(g);
  Eigen::MatrixXd c(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int v = d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      c(i, j) = v == kUnreachable ? static_cast<double>(n) : static_cast<double>(v);
    }
  return c;
}

MeasuredGraph to_measured(const AttributedGraph& g) {
  const int n = g.num_nodes();
  if (n == 0) throw std::invalid_argument("to_measured: empty graph");
  MeasuredGraph mg;
  mg.weights.assign(static_cast<std::size_t>(n), 1.0 / n);
  mg.features.resize(n, kFeatureDim);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < kFeatureDim; ++k) mg.features(i, k) = g.features[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  mg.structure = structure_matrix(g);
  return mg;
}

Eigen::MatrixXd feature_cost_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("feature_cost_matrix: feature dimensions differ");
  Eigen::MatrixXd m(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) m(i, j) = (a.row(i) - b.row(j)).norm();
  return m;
}

Eigen::MatrixXd gw_tensor_product(const Eigen::MatrixXd& c1, const Eigen::MatrixXd& c2, const Eigen::MatrixXd& pi) {
  const Eigen::Index n = c1.rows(), m = c2.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, m);
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index l = 0; l < m; ++l) {
      const double p = pi(k, l);
      if (p == 0.0) continue;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double a = c1(i, k);
        for (Eigen::Index j = 0; j < m; ++j) out(i, j) += std::abs(a - c2(j, l)) * p;
      }
    }
  return out;
}

namespace {

void check_coupling_shape(const Eigen::MatrixXd& m, const Eigen::MatrixXd& c1, const Eigen::MatrixXd& c2,
                          const Coupling& pi) {
  if (pi.rows() != c1.rows() || pi.cols() != c2.rows() || m.rows() != pi.rows() || m.cols() != pi.cols())
    throw std::invalid_argument("fgw_cost: shape mismatch");
}

double objective(const Eigen::MatrixXd& m, const Eigen::MatrixXd& c1, const Eigen::MatrixXd& c2,
                 const Coupling& pi, double alpha) {
  return (1.0 - alpha) * (m.array() * pi.array()).sum() +
         alpha * (gw_tensor_product(c1, c2, pi).array() * pi.array()).sum();
}

bool uniform_square(const MeasuredGraph& g1, const MeasuredGraph& g2) {
  if (g1.size() != g2.size()) return false;
  const double w = 1.0 / g1.size();
  auto uniform = [&](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return std::abs(x - w) < 1e-12; });
  };
  return uniform(g1.weights) && uniform(g2.weights);
}

Coupling permutation_coupling(const std::vector<int>& p) {
  const auto n = static_cast<Eigen::Index>(p.size());
  Coupling pi = Coupling::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) pi(i, p[static_cast<std::size_t>(i)]) = 1.0 / static_cast<double>(n);
  return pi;
}

Coupling linear_oracle(const Eigen::MatrixXd& grad, const MeasuredGraph& g1, const MeasuredGraph& g2,
                       bool square_uniform) {
  if (square_uniform) return permutation_coupling(solve_assignment(grad));
  return solve_transport(grad, g1.weights, g2.weights);
}

double permutation_cost(const std::vector<int>& p, const Eigen::MatrixXd& m, const Eigen::MatrixXd& c1,
                        const Eigen::MatrixXd& c2, double alpha) {
  const std::size_t n = p.size();
  double lin = 0.0, quad = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    lin += m(static_cast<Eigen::Index>(i), p[i]);
    for (std::size_t k = 0; k < n; ++k)
      quad += std::abs(c1(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) - c2(p[i], p[k]));
  }
  const double dn = static_cast<double>(n);
  return (1.0 - alpha) * lin / dn + alpha * quad / (dn * dn);
}

// Best-improvement pairwise swap search over permutations.
std::vector<int> swap_local_search(std::vector<int> p, const Eigen::MatrixXd& m, const Eigen::MatrixXd& c1,
                                   const Eigen::MatrixXd& c2, double alpha) {
  double best = permutation_cost(p, m, c1, c2, alpha);
  for (;;) {
    double move_cost = best;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = i + 1; j < p.size(); ++j) {
        std::swap(p[i], p[j]);
        const double c = permutation_cost(p, m, c1, c2, alpha);
        std::swap(p[i], p[j]);
        if (c < move_cost - 1e-13) {
          move_cost = c;
          bi = i;
          bj = j;
        }
      }
    if (move_cost >= best - 1e-13) break;
    std::swap(p[bi], p[bj]);
    best = move_cost;
  }
  return p;
}

}  // namespace

double fgw_cost(const Eigen::MatrixXd& m, const Eigen::MatrixXd& c1, const Eigen::MatrixXd& c2,
                const Coupling& pi, double alpha) {
  check_coupling_shape(m, c1, c2, pi);
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("fgw_cost: alpha must lie in [0,1]");
  if (pi.minCoeff() < -1e-12) throw std::invalid_argument("fgw_cost: coupling has negative mass");
  if (std::abs(pi.sum() - 1.0) > 1e-6) throw std::invalid_argument("fgw_cost: coupling mass must be 1");
  return objective(m, c1, c2, pi, alpha);
}

bool is_admissible(const Coupling& pi, const std::vector<double>& h, const std::vector<double>& g, double tol) {
  if (pi.rows() != static_cast<Eigen::Index>(h.size()) || pi.cols() != static_cast<Eigen::Index>(g.size()))
    return false;
  if (pi.minCoeff() < -tol) return false;
  for (Eigen::Index i = 0; i < pi.rows(); ++i)
    if (std::abs(pi.row(i).sum() - h[static_cast<std::size_t>(i)]) > tol) return false;
  for (Eigen::Index j = 0; j < pi.cols(); ++j)
    if (std::abs(pi.col(j).sum() - g[static_cast<std::size_t>(j)]) > tol) return false;
  return true;
}

double fgw_cost(const MeasuredGraph& g1, const MeasuredGraph& g2, const Coupling& pi, double alpha) {
  if (!is_admissible(pi, g1.weights, g2.weights)) throw std::invalid_argument("fgw_cost: inadmissible coupling");
  return fgw_cost(feature_cost_matrix(g1.features, g2.features), g1.structure, g2.structure, pi, alpha);
}

FgwResult fgw_conditional_gradient(const MeasuredGraph& g1, const MeasuredGraph& g2, double alpha,
                                   const Coupling& start, const FgwOptions& options) {
  const Eigen::MatrixXd m = feature_cost_matrix(g1.features, g2.features);
  const auto& c1 = g1.structure;
  const auto& c2 = g2.structure;
  const bool square = uniform_square(g1, g2);

  FgwResult r;
  r.coupling = start;
  r.cost = objective(m, c1, c2, r.coupling, alpha);
  r.objective_trace.push_back(r.cost);
  for (int it = 0; it < options.max_iterations; ++it) {
    const Eigen::MatrixXd tensor = gw_tensor_product(c1, c2, r.coupling);
    const Eigen::MatrixXd grad = (1.0 - alpha) * m + 2.0 * alpha * tensor;
    const Coupling target = linear_oracle(grad, g1, g2, square);
    const Eigen::MatrixXd dir = target - r.coupling;
    const double slope = (grad.array() * dir.array()).sum();
    if (slope >= -options.gap_tolerance) break;
    const double curvature = alpha * (gw_tensor_product(c1, c2, dir).array() * dir.array()).sum();
    double step;
    if (curvature > 0.0)
      step = std::clamp(-slope / (2.0 * curvature), 0.0, 1.0);
    else
      step = (curvature + slope < 0.0) ? 1.0 : 0.0;
    if (step <= 0.0) break;
    Coupling next = r.coupling + step * dir;
    const double next_cost = objective(m, c1, c2, next, alpha);
    if (next_cost > r.cost) break;  // numerical stall; keep the monotone iterate
    r.coupling = std::move(next);
    r.cost = next_cost;
    r.objective_trace.push_back(r.cost);
    r.iterations = it + 1;
  }
  return r;
}

namespace {

long factorial(int n) {
  long f = 1;
  for (int k = 2; k <= n; ++k) f *= k;
  return f;
}

// North-west corner vertex of the transport polytope for the given row and column orders.
Coupling north_west(const std::vector<double>& h, const std::vector<double>& g, const std::vector<int>& rows,
                    const std::vector<int>& cols) {
  Coupling pi = Coupling::Zero(static_cast<Eigen::Index>(h.size()), static_cast<Eigen::Index>(g.size()));
  std::vector<double> rh = h, rg = g;
  std::size_t i = 0, j = 0;
  while (i < rows.size() && j < cols.size()) {
    const int r = rows[i], c = cols[j];
    const double x = std::min(rh[static_cast<std::size_t>(r)], rg[static_cast<std::size_t>(c)]);
    pi(r, c) += x;
    rh[static_cast<std::size_t>(r)] -= x;
    rg[static_cast<std::size_t>(c)] -= x;
    const bool row_done = rh[static_cast<std::size_t>(r)] <= 1e-15;
    const bool col_done = rg[static_cast<std::size_t>(c)] <= 1e-15;
    if (row_done) ++i;
    if (col_done || (!row_done && !col_done)) ++j;
  }
  return pi;
}

// The cheapest distinct north-west corner vertices over all row and column orders. The vertex set
// does not depend on node labels, so the resulting start set is relabelling invariant.
std::vector<Coupling> cheapest_vertices(const MeasuredGraph& g1, const MeasuredGraph& g2, const Eigen::MatrixXd& feat,
                                        double alpha, const FgwOptions& options) {
  const int n = g1.size(), m = g2.size();
  if (options.vertex_starts <= 0 || n > 8 || m > 8 || factorial(n) * factorial(m) > options.vertex_enumeration_limit)
    return {};
  std::vector<std::pair<double, Coupling>> found;
  std::vector<int> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);
  do {
    std::vector<int> cols(static_cast<std::size_t>(m));
    std::iota(cols.begin(), cols.end(), 0);
    do {
      Coupling pi = north_west(g1.weights, g2.weights, rows, cols);
      bool seen = false;
      for (const auto& f : found)
        if ((f.second - pi).cwiseAbs().maxCoeff() < 1e-12) {
          seen = true;
          break;
        }
      if (!seen) found.push_back({objective(feat, g1.structure, g2.structure, pi, alpha), std::move(pi)});
    } while (std::next_permutation(cols.begin(), cols.end()));
  } while (std::next_permutation(rows.begin(), rows.end()));
  std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Coupling> out;
  for (std::size_t k = 0; k < found.size() && static_cast<int>(k) < options.vertex_starts; ++k) out.push_back(found[k].second);
  return out;
}

}  // namespace

FgwResult fgw_distance(const MeasuredGraph& g1, const MeasuredGraph& g2, double alpha, const FgwOptions& options) {
  g1.check();
  g2.check();
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("fgw_distance: alpha must lie in [0,1]");
  const int n = g1.size(), m = g2.size();
  const Eigen::MatrixXd feat = feature_cost_matrix(g1.features, g2.features);
  const bool square = uniform_square(g1, g2);

  Eigen::Map<const Eigen::VectorXd> h(g1.weights.data(), n);
  Eigen::Map<const Eigen::VectorXd> g(g2.weights.data(), m);
  const Coupling product = h * g.transpose();

  std::vector<Coupling> starts;
  starts.push_back(product);
  const Eigen::MatrixXd grad0 = (1.0 - alpha) * feat + 2.0 * alpha * gw_tensor_product(g1.structure, g2.structure, product);
  if (square) {
    std::vector<std::vector<int>> perms;
    std::vector<int> identity(static_cast<std::size_t>(n));
    std::iota(identity.begin(), identity.end(), 0);
    perms.push_back(identity);
    perms.push_back(solve_assignment(feat));
    perms.push_back(solve_assignment(grad0));
    // Start set closed under inversion so that swapping the arguments mirrors the search.
    Rng rng(0x46475753u);
    for (int k = 0; k < options.random_starts; ++k) {
      std::vector<int> p = identity;
      rng.shuffle(p);
      perms.push_back(p);
      perms.push_back(invert_permutation(p));
    }
    for (auto& p : perms) {
      if (n <= options.local_search_max_nodes) p = swap_local_search(p, feat, g1.structure, g2.structure, alpha);
      starts.push_back(permutation_coupling(p));
    }
  } else {
    starts.push_back(solve_transport(feat, g1.weights, g2.weights));
    starts.push_back(solve_transport(grad0, g1.weights, g2.weights));
    for (auto& v : cheapest_vertices(g1, g2, feat, alpha, options)) starts.push_back(std::move(v));
  }

  FgwResult best;
  bool have = false;
  for (const auto& s : starts) {
    FgwResult r = fgw_conditional_gradient(g1, g2, alpha, s, options);
    if (!have || r.cost < best.cost) {
      best = std::move(r);
      have = true;
    }
  }
  return best;
}

FgwResult fgw_distance(const AttributedGraph& g1, const AttributedGraph& g2, double alpha, const FgwOptions& options) {
  return fgw_distance(to_measured(g1), to_measured(g2), alpha, options);
}

double fgw_bruteforce(const MeasuredGraph& g1, const MeasuredGraph& g2, double alpha) {
  if (g1.size() != g2.size() || g1.size() > 6 || !uniform_square(g1, g2))
    throw std::invalid_argument("fgw_bruteforce: requires equal sizes n <= 6 and uniform weights");
  const Eigen::MatrixXd m = feature_cost_matrix(g1.features, g2.features);
  std::vector<int> p(static_cast<std::size_t>(g1.size()));
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    best = std::min(best, fgw_cost(m, g1.structure, g2.structure, permutation_coupling(p), alpha));
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

}  // namespace gacd

#include "gacd/transport.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace gacd {

std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw std::invalid_argument("solve_assignment: cost must be square");
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  // 1-indexed potentials formulation; p[j] = row matched to column j.
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<bool> used(static_cast<std::size_t>(n) + 1, false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return assignment;
}

Eigen::MatrixXd solve_transport(const Eigen::MatrixXd& cost, const std::vector<double>& a,
                                const std::vector<double>& b) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (static_cast<int>(a.size()) != n || static_cast<int>(b.size()) != m)
    throw std::invalid_argument("solve_transport: marginal sizes do not match cost");
  const double sa = std::accumulate(a.begin(), a.end(), 0.0);
  const double sb = std::accumulate(b.begin(), b.end(), 0.0);
  if (std::abs(sa - sb) > 1e-9) throw std::invalid_argument("solve_transport: unbalanced marginals");

  // Residual network: node 0 = source, 1..n rows, n+1..n+m columns, n+m+1 sink.
  struct Arc {
    int to;
    int rev;
    double cap;
    double cost;
  };
  const int nodes = n + m + 2;
  const int src = 0, sink = n + m + 1;
  std::vector<std::vector<Arc>> g(static_cast<std::size_t>(nodes));
  auto add_arc = [&](int u, int v, double cap, double c) {
    g[static_cast<std::size_t>(u)].push_back({v, static_cast<int>(g[static_cast<std::size_t>(v)].size()), cap, c});
    g[static_cast<std::size_t>(v)].push_back({u, static_cast<int>(g[static_cast<std::size_t>(u)].size()) - 1, 0.0, -c});
  };
  const double big = sa + 1.0;
  for (int i = 0; i < n; ++i) add_arc(src, 1 + i, a[static_cast<std::size_t>(i)], 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) add_arc(1 + i, 1 + n + j, big, cost(i, j));
  for (int j = 0; j < m; ++j) add_arc(1 + n + j, sink, b[static_cast<std::size_t>(j)], 0.0);

  const double eps = 1e-15;
  double remaining = sa;
  const double inf = std::numeric_limits<double>::infinity();
  while (remaining > eps) {
    // Bellman-Ford (queue based); arc costs may be negative.
    std::vector<double> dist(static_cast<std::size_t>(nodes), inf);
    std::vector<int> prev_node(static_cast<std::size_t>(nodes), -1), prev_arc(static_cast<std::size_t>(nodes), -1);
    std::vector<bool> in_queue(static_cast<std::size_t>(nodes), false);
    std::vector<int> queue{src};
    dist[src] = 0.0;
    in_queue[src] = true;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const int u = queue[head];
      in_queue[static_cast<std::size_t>(u)] = false;
      for (std::size_t k = 0; k < g[static_cast<std::size_t>(u)].size(); ++k) {
        const Arc& e = g[static_cast<std::size_t>(u)][k];
        if (e.cap <= eps) continue;
        const double nd = dist[static_cast<std::size_t>(u)] + e.cost;
        if (nd < dist[static_cast<std::size_t>(e.to)] - 1e-14) {
          dist[static_cast<std::size_t>(e.to)] = nd;
          prev_node[static_cast<std::size_t>(e.to)] = u;
          prev_arc[static_cast<std::size_t>(e.to)] = static_cast<int>(k);
          if (!in_queue[static_cast<std::size_t>(e.to)]) {
            in_queue[static_cast<std::size_t>(e.to)] = true;
            queue.push_back(e.to);
          }
        }
      }
    }
    if (dist[sink] == inf) break;
    double push = remaining;
    for (int v = sink; v != src; v = prev_node[static_cast<std::size_t>(v)]) {
      const Arc& e = g[static_cast<std::size_t>(prev_node[static_cast<std::size_t>(v)])][static_cast<std::size_t>(prev_arc[static_cast<std::size_t>(v)])];
      push = std::min(push, e.cap);
    }
    for (int v = sink; v != src; v = prev_node[static_cast<std::size_t>(v)]) {
      Arc& e = g[static_cast<std::size_t>(prev_node[static_cast<std::size_t>(v)])][static_cast<std::size_t>(prev_arc[static_cast<std::size_t>(v)])];
      e.cap -= push;
      g[static_cast<std::size_t>(e.to)][static_cast<std::size_t>(e.rev)].cap += push;
    }
    remaining -= push;
  }

  Eigen::MatrixXd plan = Eigen::MatrixXd::Zero(n, m);
  for (int i = 0; i < n; ++i)
    for (const Arc& e : g[static_cast<std::size_t>(1 + i)])
      if (e.to > n && e.to <= n + m) plan(i, e.to - 1 - n) = big - e.cap;
  return plan;
}

}  // namespace gacd

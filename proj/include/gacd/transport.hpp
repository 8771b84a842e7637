#pragma once

#include <Eigen/Dense>
#include <vector>

namespace gacd {

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method).
/// Returns assignment[row] = column.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

/// Exact balanced transportation problem min <cost, P> s.t. P 1 = a, P^T 1 = b, P >= 0,
/// solved by successive shortest paths on the residual network.
Eigen::MatrixXd solve_transport(const Eigen::MatrixXd& cost, const std::vector<double>& a,
                                const std::vector<double>& b);

}  // namespace gacd

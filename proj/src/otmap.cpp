#include "gacd/otmap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace gacd {

LatentCodes make_codes(const Eigen::MatrixXd& z, std::vector<double> nu, double merge_tol) {
  if (z.rows() == 0) throw std::invalid_argument("make_codes: no codes");
  if (nu.empty()) nu.assign(static_cast<std::size_t>(z.rows()), 1.0 / static_cast<double>(z.rows()));
  if (static_cast<Eigen::Index>(nu.size()) != z.rows()) throw std::invalid_argument("make_codes: mass count mismatch");
  const double total = std::accumulate(nu.begin(), nu.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("make_codes: masses must sum to 1");
  std::vector<Eigen::VectorXd> rows;
  LatentCodes out;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    bool merged = false;
    for (std::size_t j = 0; j < rows.size(); ++j)
      if ((rows[j] - z.row(i).transpose()).norm() <= merge_tol) {
        out.nu[j] += nu[static_cast<std::size_t>(i)];
        merged = true;
        break;
      }
    if (!merged) {
      rows.push_back(z.row(i).transpose());
      out.nu.push_back(nu[static_cast<std::size_t>(i)]);
    }
  }
  out.z.resize(static_cast<Eigen::Index>(rows.size()), z.cols());
  for (std::size_t j = 0; j < rows.size(); ++j) out.z.row(static_cast<Eigen::Index>(j)) = rows[j].transpose();
  return out;
}

double SdotMap::cost(const Eigen::VectorXd& x, int i) const {
  if (cost_kind == CostKind::DecodedFGW) {
    if (!custom_cost) throw std::logic_error("DecodedFGW map has no cost callback");
    return custom_cost(x, i);
  }
  return (x - codes.z.row(i).transpose()).squaredNorm();
}

int assign_cell(const Eigen::VectorXd& x, const SdotMap& m) {
  int best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (int i = 0; i < m.codes.size(); ++i) {
    const double s = m.cost(x, i) - m.phi(i);
    if (s < best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

Eigen::MatrixXd sample_unit_cube(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd s(n, d);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) s(i, k) = rng.uniform();
  return s;
}

namespace {

Eigen::MatrixXd cost_matrix(const SdotMap& m, const Eigen::MatrixXd& samples) {
  const int n = static_cast<int>(samples.rows()), t = m.codes.size();
  Eigen::MatrixXd c(n, t);
  if (m.cost_kind == CostKind::SquaredEuclidean) {
    const Eigen::VectorXd zn = m.codes.z.rowwise().squaredNorm();
    const Eigen::VectorXd xn = samples.rowwise().squaredNorm();
    c = -2.0 * samples * m.codes.z.transpose();
    c.colwise() += xn;
    c.rowwise() += zn.transpose();
  } else {
    for (int s = 0; s < n; ++s) {
      const Eigen::VectorXd x = samples.row(s).transpose();
      for (int i = 0; i < t; ++i) c(s, i) = m.cost(x, i);
    }
  }
  return c;
}

std::vector<int> hard_assign(const Eigen::MatrixXd& c, const Eigen::VectorXd& phi) {
  std::vector<int> cell(static_cast<std::size_t>(c.rows()));
  for (Eigen::Index s = 0; s < c.rows(); ++s) {
    int best = 0;
    double bv = c(s, 0) - phi(0);
    for (Eigen::Index i = 1; i < c.cols(); ++i) {
      const double v = c(s, i) - phi(i);
      if (v < bv) {
        bv = v;
        best = static_cast<int>(i);
      }
    }
    cell[static_cast<std::size_t>(s)] = best;
  }
  return cell;
}

std::vector<double> masses_of(const std::vector<int>& cell, int t) {
  std::vector<double> m(static_cast<std::size_t>(t), 0.0);
  for (int c : cell) m[static_cast<std::size_t>(c)] += 1.0;
  for (double& x : m) x /= static_cast<double>(cell.size());
  return m;
}

double max_error(const std::vector<double>& m, const std::vector<double>& nu) {
  double e = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) e = std::max(e, std::abs(m[i] - nu[i]));
  return e;
}

// Entropic dual  F(phi) = <nu, phi> - eps * mean_s log sum_i exp((phi_i - c_si) / eps).
struct SmoothDual {
  double value = 0.0;
  Eigen::VectorXd grad;  // nu - soft masses
  Eigen::MatrixXd neg_hessian;
};

SmoothDual smooth_dual(const Eigen::MatrixXd& c, const Eigen::VectorXd& phi, const Eigen::VectorXd& nu, double eps,
                       bool with_hessian) {
  const Eigen::Index n = c.rows(), t = c.cols();
  SmoothDual d;
  // Soft assignments, one row per sample.
  Eigen::MatrixXd p = (c.rowwise() - phi.transpose()) * (-1.0 / eps);
  const Eigen::VectorXd mx = p.rowwise().maxCoeff();
  p = (p.colwise() - mx).array().exp();
  const Eigen::VectorXd z = p.rowwise().sum();
  p.array().colwise() /= z.array();
  const double dn = static_cast<double>(n);
  const Eigen::VectorXd soft = p.colwise().sum().transpose() / dn;
  d.value = nu.dot(phi) - eps * (mx.sum() + z.array().log().sum()) / dn;
  d.grad = nu - soft;
  if (with_hessian) {
    d.neg_hessian = Eigen::MatrixXd::Zero(t, t);
    d.neg_hessian.selfadjointView<Eigen::Lower>().rankUpdate(p.transpose(), -1.0);
    d.neg_hessian = d.neg_hessian.selfadjointView<Eigen::Lower>();
    d.neg_hessian.diagonal() += soft * dn;
    d.neg_hessian /= (dn * eps);
  }
  return d;
}

}  // namespace

SdotMap fit_sdot(const LatentCodes& codes, CostKind kind, const SdotOptions& options, CodeCost custom) {
  const int t = codes.size();
  if (t == 0) throw std::invalid_argument("fit_sdot: no codes");
  if (options.mc_samples < 10 * t) throw std::invalid_argument("fit_sdot: mc_samples must be at least 10 T");
  if (options.lr <= 0.0) throw std::invalid_argument("fit_sdot: lr must be positive");
  if (kind == CostKind::DecodedFGW && !custom) throw std::invalid_argument("fit_sdot: DecodedFGW needs a cost callback");
  SdotMap m;
  m.codes = codes;
  m.cost_kind = kind;
  m.custom_cost = std::move(custom);
  m.phi = Eigen::VectorXd::Zero(t);
  if (t == 1) {
    m.masses = {1.0};
    return m;
  }
  const Eigen::MatrixXd samples = sample_unit_cube(options.mc_samples, codes.dim(), options.seed);
  const Eigen::MatrixXd c = cost_matrix(m, samples);
  const Eigen::VectorXd nu = Eigen::Map<const Eigen::VectorXd>(codes.nu.data(), t);

  // Cost scale: mean spread of a sample's costs across codes.
  double scale = 0.0;
  for (Eigen::Index s = 0; s < c.rows(); ++s) scale += c.row(s).maxCoeff() - c.row(s).minCoeff();
  scale = std::max(scale / static_cast<double>(c.rows()), 1e-12);

  // Damped Newton ascent on an entropic smoothing of the dual, annealed towards the hard problem,
  // followed by plain supergradient steps on the hard dual.
  double err = 1.0;
  int iters = 0;
  for (double rel : {1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6}) {
    if (rel > options.initial_smoothing * (1 + 1e-9)) continue;
    const double eps = rel * scale;
    for (int it = 0; it < 40 && iters < options.iters; ++it, ++iters) {
      SmoothDual d = smooth_dual(c, m.phi, nu, eps, true);
      if (d.grad.cwiseAbs().maxCoeff() < 1e-9) break;
      Eigen::MatrixXd h = d.neg_hessian;
      h.array() += h.trace() / (t * static_cast<double>(t));  // removes the constant-shift null space
      Eigen::VectorXd step = h.ldlt().solve(d.grad);
      if (!step.allFinite()) step = options.lr * scale * d.grad;
      step.array() -= step.mean();
      double alpha = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 30; ++ls, alpha *= 0.5) {
        const Eigen::VectorXd trial = m.phi + alpha * step;
        if (smooth_dual(c, trial, nu, eps, false).value >= d.value - 1e-15) {
          m.phi = trial;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
    err = max_error(masses_of(hard_assign(c, m.phi), t), codes.nu);
    if (err <= options.target_error) break;
  }
  double lr = options.lr * scale * 1e-2;
  while (err > options.target_error && iters < options.iters) {
    const auto mass = masses_of(hard_assign(c, m.phi), t);
    for (int i = 0; i < t; ++i) m.phi(i) += lr * (codes.nu[static_cast<std::size_t>(i)] - mass[static_cast<std::size_t>(i)]);
    lr *= 0.999;
    ++iters;
    err = max_error(masses_of(hard_assign(c, m.phi), t), codes.nu);
  }
  m.phi.array() -= m.phi.mean();
  m.masses = masses_of(hard_assign(c, m.phi), t);
  m.fit_mass_error = max_error(m.masses, codes.nu);
  m.iterations = iters;
  if (m.fit_mass_error > 5.0 * options.target_error)
    throw std::runtime_error("fit_sdot: no convergence after " + std::to_string(iters) +
                             " iterations, mass error " + std::to_string(m.fit_mass_error));
  return m;
}

std::vector<double> estimate_masses(const SdotMap& m, int n, std::uint64_t seed) {
  const Eigen::MatrixXd s = sample_unit_cube(n, m.dim(), seed);
  return masses_of(hard_assign(cost_matrix(m, s), m.phi), m.codes.size());
}

double max_mass_error(const SdotMap& m, const std::vector<double>& masses) { return max_error(masses, m.codes.nu); }

CellStats cell_statistics(const SdotMap& m, int n, std::uint64_t seed) {
  CellStats st;
  st.samples = sample_unit_cube(n, m.dim(), seed);
  st.cell = hard_assign(cost_matrix(m, st.samples), m.phi);
  const int t = m.codes.size();
  st.members.assign(static_cast<std::size_t>(t), {});
  st.centroids = Eigen::MatrixXd::Constant(t, m.dim(), 0.5);
  for (int s = 0; s < n; ++s) st.members[static_cast<std::size_t>(st.cell[static_cast<std::size_t>(s)])].push_back(s);
  for (int i = 0; i < t; ++i) {
    const auto& mem = st.members[static_cast<std::size_t>(i)];
    if (mem.empty()) continue;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(m.dim());
    for (int s : mem) acc += st.samples.row(s).transpose();
    st.centroids.row(i) = (acc / static_cast<double>(mem.size())).transpose();
  }
  st.masses = masses_of(st.cell, t);
  return st;
}

double transport_cost(const SdotMap& m, const Eigen::MatrixXd& samples) {
  if (samples.rows() == 0) throw std::invalid_argument("transport_cost: no samples");
  double total = 0.0;
  for (Eigen::Index s = 0; s < samples.rows(); ++s) {
    const Eigen::VectorXd x = samples.row(s).transpose();
    total += m.cost(x, assign_cell(x, m));
  }
  return total / static_cast<double>(samples.rows());
}

SimplicialExtension extend(const SdotMap& m, double theta, double beta) {
  SimplicialExtension ext;
  ext.base = m;
  ext.beta = beta;
  ext.neighbors = std::min(m.dim() + 1, m.codes.size());
  if (theta <= 0.0) {
    std::vector<double> d;
    for (int i = 0; i < m.codes.size(); ++i)
      for (int j = i + 1; j < m.codes.size(); ++j) d.push_back((m.codes.z.row(i) - m.codes.z.row(j)).norm());
    if (d.empty()) {
      theta = 1.0;
    } else {
      std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
      theta = 2.0 * d[d.size() / 2];
    }
  }
  if (!(theta > 0.0)) throw std::invalid_argument("extend: theta must be positive");
  ext.theta = theta;
  return ext;
}

Eigen::VectorXd apply_extension(const SimplicialExtension& ext, const Eigen::VectorXd& x) {
  const SdotMap& m = ext.base;
  const int t = m.codes.size();
  std::vector<std::pair<double, int>> scores;
  for (int i = 0; i < t; ++i) scores.push_back({m.cost(x, i) - m.phi(i), i});
  std::partial_sort(scores.begin(), scores.begin() + ext.neighbors, scores.end());
  scores.resize(static_cast<std::size_t>(ext.neighbors));
  double diameter = 0.0;
  for (std::size_t a = 0; a < scores.size(); ++a)
    for (std::size_t b = a + 1; b < scores.size(); ++b)
      diameter = std::max(diameter, (m.codes.z.row(scores[a].second) - m.codes.z.row(scores[b].second)).norm());
  if (diameter > ext.theta) return m.codes.z.row(scores[0].second).transpose();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m.dim());
  double total = 0.0;
  for (const auto& [s, i] : scores) {
    const double w = std::exp(-ext.beta * (s - scores[0].first));
    out += w * m.codes.z.row(i).transpose();
    total += w;
  }
  return out / total;
}

Eigen::VectorXd deep_interior_point(const SdotMap& m, int i, const CellStats& stats) {
  const auto& mem = stats.members.at(static_cast<std::size_t>(i));
  if (mem.empty()) throw std::runtime_error("deep_interior_point: empty cell");
  double best_gap = -1.0;
  int best = mem.front();
  for (int s : mem) {
    const Eigen::VectorXd x = stats.samples.row(s).transpose();
    const double own = m.cost(x, i) - m.phi(i);
    double second = std::numeric_limits<double>::infinity();
    for (int j = 0; j < m.codes.size(); ++j)
      if (j != i) second = std::min(second, m.cost(x, j) - m.phi(j));
    if (second - own > best_gap) {
      best_gap = second - own;
      best = s;
    }
  }
  return stats.samples.row(best).transpose();
}

// ---------------------------------------------------------------- forward map

ForwardMapNet::ForwardMapNet(nn::ParamStore& store, const std::string& name, int d, int hidden, Rng& rng)
    : mlp(store, name, {d, hidden, hidden, d}, nn::Activation::Tanh, rng), dim(d) {}

nn::Var ForwardMapNet::operator()(nn::Tape& t, nn::ParamStore& store, nn::Var z) const {
  return nn::sigmoid(mlp(t, store, z));
}

nn::Var forward_map_loss(nn::Tape& t, nn::ParamStore& store, const ForwardMapNet& net, const nn::Matrix& z,
                         const nn::Matrix& targets) {
  nn::Var out = net(t, store, t.constant(z));
  return nn::mean(nn::row_norm(nn::sub(out, t.constant(targets))));
}

Eigen::VectorXd TrainedForwardMap::apply(const Eigen::VectorXd& z) const {
  nn::Tape t;
  auto& s = const_cast<nn::ParamStore&>(store);
  nn::Matrix zin = z.transpose();
  const nn::Matrix out = net(t, s, t.constant(zin)).value();
  return out.row(0).transpose();
}

TrainedForwardMap train_forward_map(const Eigen::MatrixXd& codes, const Eigen::MatrixXd& targets,
                                    const ForwardMapOptions& options) {
  if (codes.rows() != targets.rows() || codes.cols() != targets.cols() || codes.rows() == 0)
    throw std::invalid_argument("train_forward_map: codes and targets must be matching T x d matrices");
  TrainedForwardMap h;
  Rng rng(options.seed);
  h.net = ForwardMapNet(h.store, "h_psi", static_cast<int>(codes.cols()), options.hidden, rng);
  const nn::Matrix z = codes;
  const nn::Matrix x = targets;
  nn::AdamConfig adam;
  for (int e = 0; e < options.epochs; ++e) {
    const double progress = static_cast<double>(e) / std::max(1, options.epochs - 1);
    adam.lr = options.final_lr + 0.5 * (options.lr - options.final_lr) * (1.0 + std::cos(3.141592653589793 * progress));
    h.store.zero_grad();
    nn::Tape t;
    nn::Var loss = forward_map_loss(t, h.store, h.net, z, x);
    if (!std::isfinite(loss.scalar())) throw std::runtime_error("train_forward_map: loss diverged");
    h.loss_history.push_back(loss.scalar());
    t.backward(loss);
    h.store.adam_step(adam);
  }
  nn::Tape t;
  h.loss_history.push_back(forward_map_loss(t, h.store, h.net, z, x).scalar());
  return h;
}

Eigen::VectorXd forward_map_apply(const TrainedForwardMap& h, const Eigen::VectorXd& z) { return h.apply(z); }

}  // namespace gacd

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gacd/neural.hpp"

namespace gacd {

/// T latent codes with masses nu.
struct LatentCodes {
  Eigen::MatrixXd z;  // T x d
  std::vector<double> nu;

  int size() const { return static_cast<int>(z.rows()); }
  int dim() const { return static_cast<int>(z.cols()); }
};

/// Builds codes with uniform masses unless nu is given. A row within merge_tol of an earlier
/// kept row is merged into it with summed mass.
LatentCodes make_codes(const Eigen::MatrixXd& z, std::vector<double> nu = {}, double merge_tol = 1e-12);

enum class CostKind { SquaredEuclidean, DecodedFGW };

/// c(x, i): cost of sending noise point x to code i. Required for DecodedFGW.
using CodeCost = std::function<double(const Eigen::VectorXd& x, int code)>;

struct SdotMap {
  LatentCodes codes;
  Eigen::VectorXd phi;          // dual heights
  CostKind cost_kind = CostKind::SquaredEuclidean;
  std::vector<double> masses;   // cell masses on the fitting sample
  double fit_mass_error = 0.0;  // max_i |mass_i - nu_i| on the fitting sample
  int iterations = 0;
  CodeCost custom_cost;

  int dim() const { return codes.dim(); }
  double cost(const Eigen::VectorXd& x, int i) const;
};

struct SdotOptions {
  int mc_samples = 50000;
  double lr = 0.5;  // fallback step, relative to the cost scale
  int iters = 3000;
  double target_error = 0.002;  // stop once the fitting-sample mass error is below this
  double initial_smoothing = 1e-1;  // first entropic level, relative to the cost scale
  std::uint64_t seed = 0;
};

/// Lowest index attaining min_i [c(x, z_i) - phi_i].
int assign_cell(const Eigen::VectorXd& x, const SdotMap& m);

/// Dual ascent on a fixed Monte-Carlo sample of the unit cube: damped Newton steps on an
/// entropic smoothing of the dual (annealed), then supergradient steps on the hard dual.
/// Throws std::runtime_error if the mass error is still above 5 x target_error after iters.
SdotMap fit_sdot(const LatentCodes& codes, CostKind kind, const SdotOptions& options, CodeCost custom = {});

/// Fresh uniform samples in [0,1]^d.
Eigen::MatrixXd sample_unit_cube(int n, int d, std::uint64_t seed);

/// Cell masses estimated on n fresh samples.
std::vector<double> estimate_masses(const SdotMap& m, int n, std::uint64_t seed);
double max_mass_error(const SdotMap& m, const std::vector<double>& masses);

/// Monte-Carlo cell statistics: centroids (used as L_MSE targets), member samples per cell.
struct CellStats {
  Eigen::MatrixXd samples;    // n x d
  std::vector<int> cell;      // per sample
  std::vector<std::vector<int>> members;
  Eigen::MatrixXd centroids;  // T x d; empty cells fall back to the cube centre
  std::vector<double> masses;
};
CellStats cell_statistics(const SdotMap& m, int n, std::uint64_t seed);

/// (1/n) sum_i c(x_i, tau(x_i)) over the given samples.
double transport_cost(const SdotMap& m, const Eigen::MatrixXd& samples);

struct SimplicialExtension {
  SdotMap base;
  double theta = 1.0;
  double beta = 50.0;
  int neighbors = 1;  // min(d + 1, T)
};

/// theta <= 0 selects 2 x the median pairwise code distance.
SimplicialExtension extend(const SdotMap& m, double theta = 0.0, double beta = 50.0);
Eigen::VectorXd apply_extension(const SimplicialExtension& ext, const Eigen::VectorXd& x);

/// Sample in cell i with the largest gap between its best and second-best score.
Eigen::VectorXd deep_interior_point(const SdotMap& m, int i, const CellStats& stats);

// ---- forward map h_psi: latent code -> unit cube ----

struct ForwardMapNet {
  nn::Mlp mlp;
  int dim = 0;
  ForwardMapNet() = default;
  ForwardMapNet(nn::ParamStore& store, const std::string& name, int dim, int hidden, Rng& rng);
  /// sigmoid(mlp(z)), rows in [0,1]^d.
  nn::Var operator()(nn::Tape& t, nn::ParamStore& store, nn::Var z) const;
};

/// mean over rows of || h(z_i) - x_i ||_2.
nn::Var forward_map_loss(nn::Tape& t, nn::ParamStore& store, const ForwardMapNet& net, const nn::Matrix& z,
                         const nn::Matrix& targets);

struct ForwardMapOptions {
  int hidden = 64;
  int epochs = 2000;
  double lr = 1e-2;
  double final_lr = 1e-4;  // cosine decay target
  std::uint64_t seed = 0;
};

struct TrainedForwardMap {
  nn::ParamStore store;
  ForwardMapNet net;
  std::vector<double> loss_history;

  Eigen::VectorXd apply(const Eigen::VectorXd& z) const;
};

/// Full-batch Adam on forward_map_loss. Throws std::runtime_error if the loss becomes NaN.
TrainedForwardMap train_forward_map(const Eigen::MatrixXd& codes, const Eigen::MatrixXd& targets,
                                    const ForwardMapOptions& options = {});

Eigen::VectorXd forward_map_apply(const TrainedForwardMap& h, const Eigen::VectorXd& z);

}  // namespace gacd

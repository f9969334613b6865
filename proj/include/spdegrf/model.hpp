#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spdegrf/basis.hpp"
#include "spdegrf/geometry.hpp"
#include "spdegrf/optim.hpp"
#include "spdegrf/sparse.hpp"
#include "spdegrf/spde.hpp"

namespace spdegrf {

/// Assigns nugget regions: a single region, or west (x < split, region 0)
/// and east (x >= split, region 1) of a longitude threshold.
struct RegionRule {
  std::optional<double> split;

  int count() const { return split ? 2 : 1; }
  int region_of(Point p) const { return split && p.x >= *split ? 1 : 0; }
};

struct Dataset {
  std::vector<Point> locations;
  Eigen::VectorXd y;
  Eigen::MatrixXd covariates;  // N x p, p may be zero
  std::vector<int> replicate;  // in [0, n_replicates)
  std::vector<int> region;     // in [0, n_regions)
  int n_replicates = 1;
  int n_regions = 1;

  int size() const { return static_cast<int>(locations.size()); }
  int covariate_count() const { return static_cast<int>(covariates.cols()); }

  /// Observations at `locations` in a single replicate and region.
  static Dataset single(std::vector<Point> locations, Eigen::VectorXd y);

  void validate(const Grid& grid) const;
  Dataset subset(std::span<const int> rows) const;
  /// Observations of both sets; replicate/region counts must agree.
  static Dataset concat(const Dataset& a, const Dataset& b);
};

class ModelSpec {
 public:
  /// `basis` carries k x l functions; it is ignored (replaced by the constant
  /// function) when `stationary` is set.
  ModelSpec(Grid grid, Basis2D basis, std::array<double, 4> tau, double tau_beta = 1e-4,
            bool stationary = false);

  static ModelSpec stationary_on(const Grid& grid, double tau_beta = 1e-4);

  const Grid& grid() const { return grid_; }
  /// Basis the alpha coefficients refer to.
  const Basis2D& field_basis() const { return stationary_ ? constant_ : basis_; }
  const Basis2D& basis() const { return basis_; }
  const std::array<double, 4>& tau() const { return tau_; }
  double tau_beta() const { return tau_beta_; }
  bool stationary() const { return stationary_; }
  int coefficients() const { return field_basis().size(); }

  ModelSpec as_stationary() const;
  ModelSpec with_tau(const std::array<double, 4>& tau) const;

 private:
  Grid grid_;
  Basis2D basis_;
  Basis2D constant_;
  std::array<double, 4> tau_;
  double tau_beta_;
  bool stationary_;
};

/// One independent replicate: Q_C = blockdiag(Q, tau_beta I) + S^T D S and its
/// conditional mean. Covariates (if any) are ordered after the field cells.
struct ReplicateBlock {
  std::vector<int> rows;  // observation indices
  SparseMatrix qc;
  CholeskyFactor factor;
  Eigen::VectorXd mu;
};

struct LatentSystem {
  SpdeFields fields;
  SpdeOperator op;
  SparseMatrix q;
  CholeskyFactor q_factor;
  std::vector<ReplicateBlock> blocks;
  Eigen::VectorXd noise_precision;  // per observation
  Eigen::VectorXd fitted;           // S mu_C per observation
  int cells = 0;
  int covariates = 0;

  int latent_dim() const {
    return static_cast<int>(blocks.size()) * cells + covariates;
  }
};

/// Binds a model to a dataset and caches everything that does not depend on
/// theta (sparsity analyses, observation-to-cell maps, the RW2 penalty).
class Problem {
 public:
  Problem(ModelSpec spec, Dataset data);

  const ModelSpec& spec() const { return spec_; }
  const Dataset& data() const { return data_; }
  int parameter_count() const { return kFieldCount * spec_.coefficients() + data_.n_regions; }
  const std::vector<int>& observation_cells() const { return obs_cell_; }
  const RW2Penalty& rw2() const { return rw2_; }

  NonStatParams unpack(const Eigen::VectorXd& theta) const;

  LatentSystem build(const NonStatParams& params) const;

  double penalty(const NonStatParams& params) const;
  double penalized_loglik(const NonStatParams& params) const;
  double log_marginal_density(const NonStatParams& params) const;
  Eigen::VectorXd gradient(const NonStatParams& params) const;
  /// Penalized log-likelihood and its gradient from a single factorization pass.
  double value_and_gradient(const NonStatParams& params, Eigen::VectorXd& grad) const;

  /// Likelihood without the penalty and without the 2 pi constant.
  double data_term(const NonStatParams& params, const LatentSystem& system) const;

 private:
  ModelSpec spec_;
  Dataset data_;
  RW2Penalty rw2_;
  SymbolicPattern q_symbolic_;
  std::optional<SymbolicPattern> qc_symbolic_;
  std::vector<std::vector<int>> replicate_rows_;
  std::vector<int> obs_cell_;
  std::vector<int> region_counts_;
  std::vector<int> block_source_;  // first replicate with the same Q_C structure and values

  SparseMatrix conditional_precision(const SparseMatrix& q, const std::vector<int>& rows,
                                     const Eigen::VectorXd& d) const;
};

LatentSystem build_latent_system(const ModelSpec& spec, const NonStatParams& params,
                                 const Dataset& data);
double penalized_loglik(const ModelSpec& spec, const NonStatParams& params, const Dataset& data);
double log_marginal_density(const ModelSpec& spec, const NonStatParams& params,
                            const Dataset& data);
Eigen::VectorXd gradient(const ModelSpec& spec, const NonStatParams& params, const Dataset& data);

struct FitOptions {
  LbfgsOptions lbfgs;
  /// Fit the stationary model first and start from its constant fields.
  bool nested_stationary_init = true;
  /// Finite-difference observed information for stationary fits.
  bool standard_errors = true;
};

struct FitResult {
  NonStatParams params;
  double loglik = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
  std::optional<Eigen::VectorXd> std_errors;
  double seconds = 0.0;
};

/// Heuristic stationary starting point from the data's scale and the domain size.
NonStatParams default_initial_params(const ModelSpec& spec, const Dataset& data);

FitResult fit(const ModelSpec& spec, const Dataset& data,
              std::optional<NonStatParams> init = std::nullopt, const FitOptions& options = {});

/// Approximate standard errors from the finite-difference Hessian of the
/// penalized log-likelihood (via the analytic gradient).
Eigen::VectorXd observed_information_std_errors(const Problem& problem,
                                                const NonStatParams& params,
                                                double step = 1e-4);

struct StationarySummary {
  Eigen::Matrix2d h;
  Eigen::Matrix2d h_over_kappa2;
  double kappa2 = 0.0;
  double sigma2 = 0.0;  // 1 / (4 pi kappa^2 sqrt(det H))
  std::vector<double> tau_noise;
};

StationarySummary verify_stationary_summary(double log_kappa2, double log_gamma, double vx,
                                            double vy, const std::vector<double>& log_tau_noise);
StationarySummary verify_stationary_summary(const NonStatParams& stationary);

}  // namespace spdegrf

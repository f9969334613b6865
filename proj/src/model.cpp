#include "spdegrf/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "spdegrf/errors.hpp"

namespace spdegrf {

// ---------------------------------------------------------------------------
// Dataset

Dataset Dataset::single(std::vector<Point> locations, Eigen::VectorXd y) {
  Dataset d;
  const auto n = locations.size();
  d.locations = std::move(locations);
  d.y = std::move(y);
  d.covariates.resize(static_cast<Eigen::Index>(n), 0);
  d.replicate.assign(n, 0);
  d.region.assign(n, 0);
  return d;
}

void Dataset::validate(const Grid& grid) const {
  const auto n = static_cast<Eigen::Index>(locations.size());
  if (y.size() != n || covariates.rows() != n || static_cast<Eigen::Index>(replicate.size()) != n ||
      static_cast<Eigen::Index>(region.size()) != n) {
    throw DimensionError("dataset columns have inconsistent lengths");
  }
  if (n_replicates < 1 || n_regions < 1) {
    throw InvalidArgumentError("dataset needs at least one replicate and one region");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!grid.contains(locations[i])) throw OutOfDomainError(locations[i].x, locations[i].y);
    if (replicate[i] < 0 || replicate[i] >= n_replicates) {
      throw InvalidArgumentError("replicate index out of range at observation " + std::to_string(i));
    }
    if (region[i] < 0 || region[i] >= n_regions) {
      throw InvalidArgumentError("region index out of range at observation " + std::to_string(i));
    }
    if (!std::isfinite(y[i])) {
      throw InvalidArgumentError("non-finite observation at index " + std::to_string(i));
    }
  }
}

Dataset Dataset::subset(std::span<const int> rows) const {
  Dataset d;
  d.n_replicates = n_replicates;
  d.n_regions = n_regions;
  d.y.resize(static_cast<Eigen::Index>(rows.size()));
  d.covariates.resize(static_cast<Eigen::Index>(rows.size()), covariates.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const int r = rows[k];
    d.locations.push_back(locations[r]);
    d.y[static_cast<Eigen::Index>(k)] = y[r];
    d.covariates.row(static_cast<Eigen::Index>(k)) = covariates.row(r);
    d.replicate.push_back(replicate[r]);
    d.region.push_back(region[r]);
  }
  return d;
}

Dataset Dataset::concat(const Dataset& a, const Dataset& b) {
  if (a.n_replicates != b.n_replicates || a.n_regions != b.n_regions ||
      a.covariates.cols() != b.covariates.cols()) {
    throw DimensionError("datasets have different replicate, region or covariate layouts");
  }
  Dataset d;
  d.n_replicates = a.n_replicates;
  d.n_regions = a.n_regions;
  d.locations = a.locations;
  d.locations.insert(d.locations.end(), b.locations.begin(), b.locations.end());
  d.y.resize(a.y.size() + b.y.size());
  d.y << a.y, b.y;
  d.covariates.resize(a.covariates.rows() + b.covariates.rows(), a.covariates.cols());
  if (a.covariates.cols() > 0) d.covariates << a.covariates, b.covariates;
  d.replicate = a.replicate;
  d.replicate.insert(d.replicate.end(), b.replicate.begin(), b.replicate.end());
  d.region = a.region;
  d.region.insert(d.region.end(), b.region.begin(), b.region.end());
  return d;
}

// ---------------------------------------------------------------------------
// ModelSpec

ModelSpec::ModelSpec(Grid grid, Basis2D basis, std::array<double, 4> tau, double tau_beta,
                     bool stationary)
    : grid_(std::move(grid)),
      basis_(std::move(basis)),
      constant_(Basis2D::constant(grid_)),
      tau_(tau),
      tau_beta_(tau_beta),
      stationary_(stationary) {
  for (double t : tau_) {
    if (!(t > 0.0) || !std::isfinite(t)) throw InvalidArgumentError("penalty precisions must be positive");
  }
  if (!(tau_beta_ > 0.0) || !std::isfinite(tau_beta_)) {
    throw InvalidArgumentError("fixed-effect precision must be positive");
  }
  if (!basis_.covers(grid_)) throw InvalidArgumentError("basis domain does not cover the grid");
}

ModelSpec ModelSpec::stationary_on(const Grid& grid, double tau_beta) {
  return ModelSpec(grid, Basis2D::constant(grid), {1.0, 1.0, 1.0, 1.0}, tau_beta, true);
}

ModelSpec ModelSpec::as_stationary() const {
  return ModelSpec(grid_, basis_, tau_, tau_beta_, true);
}

ModelSpec ModelSpec::with_tau(const std::array<double, 4>& tau) const {
  return ModelSpec(grid_, basis_, tau, tau_beta_, stationary_);
}

// ---------------------------------------------------------------------------
// Problem

Problem::Problem(ModelSpec spec, Dataset data)
    : spec_(std::move(spec)), data_(std::move(data)), rw2_(rw2_precision(spec_.field_basis())) {
  const Grid& grid = spec_.grid();
  data_.validate(grid);
  const int p = data_.covariate_count();
  if (p > 0 && data_.n_replicates > 1) {
    throw UnsupportedConfigurationError("covariates are supported only with a single replicate");
  }

  obs_cell_.resize(data_.size());
  for (int i = 0; i < data_.size(); ++i) obs_cell_[i] = grid.locate(data_.locations[i]).flat;
  replicate_rows_.assign(data_.n_replicates, {});
  for (int i = 0; i < data_.size(); ++i) replicate_rows_[data_.replicate[i]].push_back(i);
  region_counts_.assign(data_.n_regions, 0);
  for (int r : data_.region) ++region_counts_[r];

  // Replicates observing the same cells in the same regions have identical
  // conditional precisions; they share one factorization.
  std::map<std::vector<std::pair<int, int>>, int> seen;
  block_source_.resize(data_.n_replicates);
  for (int t = 0; t < data_.n_replicates; ++t) {
    std::vector<std::pair<int, int>> key;
    for (int i : replicate_rows_[t]) key.emplace_back(obs_cell_[i], data_.region[i]);
    std::sort(key.begin(), key.end());
    block_source_[t] = p > 0 ? t : seen.emplace(std::move(key), t).first->second;
  }

  const NonStatParams probe = NonStatParams::constant(spec_.coefficients(), 0.0, 0.0, 0.3, 0.3,
                                                      std::vector<double>(data_.n_regions, 0.0));
  const SparseMatrix q = precision_matrix(probe, spec_.field_basis(), grid);
  q_symbolic_ = SymbolicPattern::analyze(q, Ordering::Amd);
  if (p > 0) {
    const SparseMatrix qc =
        conditional_precision(q, replicate_rows_[0], Eigen::VectorXd::Ones(data_.size()));
    qc_symbolic_ = SymbolicPattern::analyze(qc, Ordering::Amd, p);
  }
}

NonStatParams Problem::unpack(const Eigen::VectorXd& theta) const {
  return NonStatParams::from_vector(theta, spec_.coefficients(), data_.n_regions);
}

SparseMatrix Problem::conditional_precision(const SparseMatrix& q, const std::vector<int>& rows,
                                            const Eigen::VectorXd& d) const {
  const int n = spec_.grid().size();
  const int p = data_.covariate_count();
  if (p == 0) {
    SparseMatrix qc = q;
    for (int i : rows) qc.coeffRef(obs_cell_[i], obs_cell_[i]) += d[i];
    return qc;
  }

  std::vector<Eigen::Triplet<double>> lower;
  lower.reserve(static_cast<std::size_t>(q.nonZeros()) / 2 + n + static_cast<std::size_t>(n) * p + p * p);
  for (int col = 0; col < n; ++col) {
    for (SparseMatrix::InnerIterator it(q, col); it; ++it) {
      if (it.row() >= col) lower.emplace_back(static_cast<int>(it.row()), col, it.value());
    }
  }
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(n, p);  // E^T D X
  Eigen::MatrixXd beta = Eigen::MatrixXd::Identity(p, p) * spec_.tau_beta();
  for (int i : rows) {
    const int c = obs_cell_[i];
    diag[c] += d[i];
    cross.row(c) += d[i] * data_.covariates.row(i);
    beta += d[i] * data_.covariates.row(i).transpose() * data_.covariates.row(i);
  }
  for (int c = 0; c < n; ++c) lower.emplace_back(c, c, diag[c]);
  for (int a = 0; a < p; ++a) {
    for (int c = 0; c < n; ++c) lower.emplace_back(n + a, c, cross(c, a));
    for (int b = 0; b <= a; ++b) lower.emplace_back(n + a, n + b, beta(a, b));
  }
  return symmetric_from_lower(n + p, lower);
}

LatentSystem Problem::build(const NonStatParams& params) const {
  if (params.coefficients() != spec_.coefficients() || params.regions() != data_.n_regions) {
    throw DimensionError("parameters do not match the model layout");
  }
  const Grid& grid = spec_.grid();
  const int n = grid.size();
  const int p = data_.covariate_count();

  LatentSystem sys;
  sys.cells = n;
  sys.covariates = p;
  sys.fields = eval_spde_fields(params, spec_.field_basis(), grid);
  sys.op = assemble_A(sys.fields, grid);
  sys.q = assemble_Q(sys.op);
  sys.q_factor = CholeskyFactor::factorize(sys.q, q_symbolic_);

  sys.noise_precision.resize(data_.size());
  for (int i = 0; i < data_.size(); ++i) {
    sys.noise_precision[i] = std::exp(params.log_tau_noise[data_.region[i]]);
  }
  sys.fitted = Eigen::VectorXd::Zero(data_.size());

  sys.blocks.resize(data_.n_replicates);
  for (int t = 0; t < data_.n_replicates; ++t) {
    ReplicateBlock& block = sys.blocks[t];
    block.rows = replicate_rows_[t];
    const int src = block_source_[t];
    if (src != t) {
      block.qc = sys.blocks[src].qc;
      block.factor = sys.blocks[src].factor;
    } else {
      block.qc = conditional_precision(sys.q, block.rows, sys.noise_precision);
      block.factor = CholeskyFactor::factorize(block.qc, p > 0 ? *qc_symbolic_ : q_symbolic_);
    }
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + p);
    for (int i : block.rows) {
      const double w = sys.noise_precision[i] * data_.y[i];
      rhs[obs_cell_[i]] += w;
      if (p > 0) rhs.tail(p) += w * data_.covariates.row(i).transpose();
    }
    block.mu = block.factor.solve(rhs);
    for (int i : block.rows) {
      double f = block.mu[obs_cell_[i]];
      if (p > 0) f += data_.covariates.row(i).dot(block.mu.tail(p));
      sys.fitted[i] = f;
    }
  }
  return sys;
}

double Problem::penalty(const NonStatParams& params) const {
  double sum = 0.0;
  for (int f = 0; f < kFieldCount; ++f) {
    sum += spec_.tau()[f] * rw2_.quadratic_form(params.alpha[f]);
  }
  return 0.5 * sum;
}

double Problem::data_term(const NonStatParams& params, const LatentSystem& sys) const {
  const int n = sys.cells;
  const int p = sys.covariates;
  const double t = static_cast<double>(sys.blocks.size());
  double value = 0.5 * t * sys.q_factor.log_det() + 0.5 * p * std::log(spec_.tau_beta());
  for (int r = 0; r < data_.n_regions; ++r) value += 0.5 * region_counts_[r] * params.log_tau_noise[r];
  for (const ReplicateBlock& block : sys.blocks) {
    const Eigen::VectorXd mu_u = block.mu.head(n);
    value -= 0.5 * block.factor.log_det();
    value -= 0.5 * mu_u.dot(sys.q * mu_u);
    if (p > 0) value -= 0.5 * spec_.tau_beta() * block.mu.tail(p).squaredNorm();
  }
  const Eigen::VectorXd resid = data_.y - sys.fitted;
  value -= 0.5 * (resid.array().square() * sys.noise_precision.array()).sum();
  return value;
}

double Problem::penalized_loglik(const NonStatParams& params) const {
  return data_term(params, build(params)) - penalty(params);
}

double Problem::log_marginal_density(const NonStatParams& params) const {
  return data_term(params, build(params)) -
         0.5 * data_.size() * std::log(2.0 * std::numbers::pi);
}

Eigen::VectorXd Problem::gradient(const NonStatParams& params) const {
  Eigen::VectorXd g;
  value_and_gradient(params, g);
  return g;
}

double Problem::value_and_gradient(const NonStatParams& params, Eigen::VectorXd& grad) const {
  const LatentSystem sys = build(params);
  const double value = data_term(params, sys) - penalty(params);
  const int n = sys.cells;
  const int p = sys.covariates;
  const int ncoef = spec_.coefficients();
  const double t = static_cast<double>(sys.blocks.size());

  // M = T Q^{-1} - sum_t (Q_C,t^{-1})_uu - sum_t mu_t mu_t^T on Q's pattern;
  // d/d theta of the likelihood is (1/2) Tr(M dQ).
  SparseMatrix m = sys.q;
  double* mv = m.valuePtr();
  {
    const PartialInverse sigma_q(sys.q_factor);
    for (int col = 0; col < n; ++col) {
      for (int k = m.outerIndexPtr()[col]; k < m.outerIndexPtr()[col + 1]; ++k) {
        mv[k] = t * sigma_q(m.innerIndexPtr()[k], col);
      }
    }
  }

  Eigen::VectorXd noise_grad = Eigen::VectorXd::Zero(data_.n_regions);
  for (int r = 0; r < data_.n_regions; ++r) noise_grad[r] = 0.5 * region_counts_[r];

  std::map<int, PartialInverse> shared;
  for (std::size_t bt = 0; bt < sys.blocks.size(); ++bt) {
    const ReplicateBlock& block = sys.blocks[bt];
    const int src = block_source_[bt];
    auto it = shared.find(src);
    if (it == shared.end()) it = shared.emplace(src, PartialInverse(block.factor)).first;
    const PartialInverse& sigma_c = it->second;
    const Eigen::VectorXd& mu = block.mu;
    for (int col = 0; col < n; ++col) {
      for (int k = m.outerIndexPtr()[col]; k < m.outerIndexPtr()[col + 1]; ++k) {
        const int row = m.innerIndexPtr()[k];
        mv[k] -= sigma_c(row, col) + mu[row] * mu[col];
      }
    }
    for (int i : block.rows) {
      const int c = obs_cell_[i];
      double quad = sigma_c(c, c);
      for (int a = 0; a < p; ++a) {
        const double xa = data_.covariates(i, a);
        quad += 2.0 * xa * sigma_c(c, n + a);
        for (int b = 0; b < p; ++b) quad += xa * data_.covariates(i, b) * sigma_c(n + a, n + b);
      }
      const double resid = data_.y[i] - sys.fitted[i];
      const int r = data_.region[i];
      noise_grad[r] -= 0.5 * sys.noise_precision[i] * (quad + resid * resid);
    }
  }

  const StencilCoefficients sens = stencil_sensitivity(sys.op, m, spec_.grid());
  const Eigen::VectorXd alpha_grad =
      alpha_gradient(sens, sys.fields, spec_.field_basis(), spec_.grid());

  grad.resize(parameter_count());
  grad.head(kFieldCount * ncoef) = alpha_grad;
  for (int f = 0; f < kFieldCount; ++f) {
    grad.segment(f * ncoef, ncoef) -= spec_.tau()[f] * (rw2_.q * params.alpha[f]);
  }
  grad.tail(data_.n_regions) = noise_grad;
  return value;
}

LatentSystem build_latent_system(const ModelSpec& spec, const NonStatParams& params,
                                 const Dataset& data) {
  return Problem(spec, data).build(params);
}

double penalized_loglik(const ModelSpec& spec, const NonStatParams& params, const Dataset& data) {
  return Problem(spec, data).penalized_loglik(params);
}

double log_marginal_density(const ModelSpec& spec, const NonStatParams& params,
                            const Dataset& data) {
  return Problem(spec, data).log_marginal_density(params);
}

Eigen::VectorXd gradient(const ModelSpec& spec, const NonStatParams& params, const Dataset& data) {
  return Problem(spec, data).gradient(params);
}

// ---------------------------------------------------------------------------
// Fitting

NonStatParams default_initial_params(const ModelSpec& spec, const Dataset& data) {
  const Grid& grid = spec.grid();
  double total_var = 1.0;
  if (data.size() > 0) {
    Eigen::VectorXd resid = data.y;
    if (data.covariate_count() > 0) {
      const Eigen::MatrixXd& x = data.covariates;
      const Eigen::VectorXd beta = (x.transpose() * x).ldlt().solve(x.transpose() * data.y);
      resid -= x * beta;
    }
    total_var = std::max(resid.squaredNorm() / data.size(), 1e-8);
  }
  // Half the variance to the field, half to the nugget; practical range a
  // fifth of the shorter side, range = sqrt(8 gamma) / kappa for H = gamma I.
  const double sigma2 = 0.5 * total_var;
  const double range =
      0.2 * std::min(grid.x_max() - grid.x_min(), grid.y_max() - grid.y_min());
  const double a = range / std::sqrt(8.0);                       // sqrt(gamma) / kappa
  const double b = 1.0 / std::sqrt(4.0 * std::numbers::pi * sigma2);  // sqrt(gamma) * kappa
  // v = 0 is a stationary point of the likelihood in v (H depends on v v^T),
  // so start slightly off it.
  const double v0 = 0.1 * std::sqrt(a * b);
  return NonStatParams::constant(spec.coefficients(), std::log(b / a), std::log(a * b), v0, 0.5 * v0,
                                 std::vector<double>(data.n_regions, std::log(1.0 / sigma2)));
}

namespace {

NonStatParams expand_constant(const NonStatParams& stationary, int coefficients) {
  NonStatParams p;
  for (int f = 0; f < kFieldCount; ++f) {
    p.alpha[f] = Eigen::VectorXd::Constant(coefficients, stationary.alpha[f][0]);
  }
  p.log_tau_noise = stationary.log_tau_noise;
  return p;
}

}  // namespace

Eigen::VectorXd observed_information_std_errors(const Problem& problem,
                                                const NonStatParams& params, double step) {
  const Eigen::VectorXd theta = params.to_vector();
  const int n = static_cast<int>(theta.size());
  Eigen::MatrixXd hess(n, n);
  for (int j = 0; j < n; ++j) {
    Eigen::VectorXd up = theta, down = theta;
    up[j] += step;
    down[j] -= step;
    hess.col(j) = (problem.gradient(problem.unpack(up)) - problem.gradient(problem.unpack(down))) /
                  (2.0 * step);
  }
  const Eigen::MatrixXd info = -0.5 * (hess + hess.transpose());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  Eigen::VectorXd se(n);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
    se.setConstant(std::numeric_limits<double>::quiet_NaN());
    return se;
  }
  const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(n, n));
  for (int i = 0; i < n; ++i) se[i] = std::sqrt(cov(i, i));
  return se;
}

FitResult fit(const ModelSpec& spec, const Dataset& data, std::optional<NonStatParams> init,
              const FitOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  int stage_evaluations = 0;
  int stage_iterations = 0;
  if (!init) {
    if (!spec.stationary() && options.nested_stationary_init) {
      FitOptions inner = options;
      inner.standard_errors = false;
      const FitResult stationary = fit(spec.as_stationary(), data, std::nullopt, inner);
      init = expand_constant(stationary.params, spec.coefficients());
      stage_evaluations = stationary.evaluations;
      stage_iterations = stationary.iterations;
    } else {
      init = default_initial_params(spec, data);
    }
  }

  const Problem problem(spec, data);
  const Objective objective = [&problem](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    Eigen::VectorXd grad;
    const double v = problem.value_and_gradient(problem.unpack(x), grad);
    g = -grad;
    return -v;
  };
  const LbfgsResult res = minimize_lbfgs(objective, init->to_vector(), options.lbfgs);

  FitResult out;
  out.params = problem.unpack(res.x);
  out.loglik = -res.value;
  out.gradient_norm = res.gradient.lpNorm<Eigen::Infinity>();
  out.iterations = res.iterations + stage_iterations;
  out.evaluations = res.evaluations + stage_evaluations;
  out.converged = res.converged;
  out.message = res.message;
  if (spec.stationary() && options.standard_errors) {
    out.std_errors = observed_information_std_errors(problem, out.params);
  }
  out.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

StationarySummary verify_stationary_summary(double log_kappa2, double log_gamma, double vx,
                                            double vy, const std::vector<double>& log_tau_noise) {
  StationarySummary s;
  const Anisotropy h = anisotropy(std::exp(log_gamma), vx, vy);
  s.h << h.h11, h.h12, h.h12, h.h22;
  s.kappa2 = std::exp(log_kappa2);
  s.h_over_kappa2 = s.h / s.kappa2;
  s.sigma2 = 1.0 / (4.0 * std::numbers::pi * s.kappa2 * std::sqrt(s.h.determinant()));
  for (double lt : log_tau_noise) s.tau_noise.push_back(std::exp(lt));
  return s;
}

StationarySummary verify_stationary_summary(const NonStatParams& p) {
  if (p.coefficients() != 1) {
    throw InvalidArgumentError("stationary summary needs one coefficient per field");
  }
  return verify_stationary_summary(p.alpha[kLogKappa2][0], p.alpha[kLogGamma][0], p.alpha[kVx][0],
                                   p.alpha[kVy][0],
                                   std::vector<double>(p.log_tau_noise.data(),
                                                       p.log_tau_noise.data() + p.regions()));
}

}  // namespace spdegrf

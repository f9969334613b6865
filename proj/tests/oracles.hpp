#pragma once

// Independent dense reference computations used by the unit and acceptance
// tests. Nothing here goes through the library's sparse machinery: fields
// are evaluated pointwise, the operator is assembled cell by cell and all
// Gaussian quantities use dense Cholesky factorizations.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "spdegrf/basis.hpp"
#include "spdegrf/geometry.hpp"
#include "spdegrf/model.hpp"
#include "spdegrf/spde.hpp"

namespace oracle {

using spdegrf::Basis2D;
using spdegrf::Dataset;
using spdegrf::Grid;
using spdegrf::NonStatParams;
using spdegrf::Point;

inline double field_at(const Basis2D& basis, const Eigen::VectorXd& alpha, Point p) {
  double s = 0.0;
  for (int k = 0; k < basis.size(); ++k) s += alpha[k] * basis.value(k, p);
  return s;
}

// H = gamma I + v v^T evaluated pointwise.
inline Eigen::Matrix2d h_at(const Basis2D& basis, const NonStatParams& p, Point s) {
  const double gamma = std::exp(field_at(basis, p.alpha[spdegrf::kLogGamma], s));
  const double vx = field_at(basis, p.alpha[spdegrf::kVx], s);
  const double vy = field_at(basis, p.alpha[spdegrf::kVy], s);
  Eigen::Matrix2d h;
  h << gamma + vx * vx, vx * vy, vx * vy, gamma + vy * vy;
  return h;
}

// Finite-volume operator: (Au)_c = kappa^2(c) u_c - (1/V) * sum of outward
// fluxes, flux through an interior edge from normal differences plus the
// tangential difference of edge-adjacent averages (clamped at the border).
inline Eigen::MatrixXd dense_operator(const Grid& g, const Basis2D& basis, const NonStatParams& p) {
  const int n = g.size();
  const double hx = g.hx(), hy = g.hy(), v = g.cell_area();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < g.nx(); ++j) {
    for (int i = 0; i < g.ny(); ++i) {
      a(g.flat(i, j), g.flat(i, j)) += std::exp(field_at(basis, p.alpha[spdegrf::kLogKappa2], g.center(i, j)));
    }
  }
  auto cell = [&](int i, int j) {
    i = std::clamp(i, 0, g.ny() - 1);
    j = std::clamp(j, 0, g.nx() - 1);
    return g.flat(i, j);
  };
  // East edges: flux from (i, j) into (i, j+1).
  for (int j = 0; j + 1 < g.nx(); ++j) {
    for (int i = 0; i < g.ny(); ++i) {
      const Point mid{g.x_min() + (j + 1) * hx, g.y_min() + (i + 0.5) * hy};
      const Eigen::Matrix2d h = h_at(basis, p, mid);
      Eigen::VectorXd flux = Eigen::VectorXd::Zero(n);
      flux[cell(i, j + 1)] += hy * h(0, 0) / hx;
      flux[cell(i, j)] -= hy * h(0, 0) / hx;
      // hy * H12 * (u_north - u_south) / (2 hy), each average over two cells.
      for (int dj = 0; dj <= 1; ++dj) {
        flux[cell(i + 1, j + dj)] += 0.25 * h(0, 1);
        flux[cell(i - 1, j + dj)] -= 0.25 * h(0, 1);
      }
      a.row(cell(i, j)) -= flux.transpose() / v;
      a.row(cell(i, j + 1)) += flux.transpose() / v;
    }
  }
  // North edges: flux from (i, j) into (i+1, j).
  for (int j = 0; j < g.nx(); ++j) {
    for (int i = 0; i + 1 < g.ny(); ++i) {
      const Point mid{g.x_min() + (j + 0.5) * hx, g.y_min() + (i + 1) * hy};
      const Eigen::Matrix2d h = h_at(basis, p, mid);
      Eigen::VectorXd flux = Eigen::VectorXd::Zero(n);
      flux[cell(i + 1, j)] += hx * h(1, 1) / hy;
      flux[cell(i, j)] -= hx * h(1, 1) / hy;
      for (int di = 0; di <= 1; ++di) {
        flux[cell(i + di, j + 1)] += 0.25 * h(0, 1);
        flux[cell(i + di, j - 1)] -= 0.25 * h(0, 1);
      }
      a.row(cell(i, j)) -= flux.transpose() / v;
      a.row(cell(i + 1, j)) += flux.transpose() / v;
    }
  }
  return a;
}

inline Eigen::MatrixXd dense_precision(const Grid& g, const Basis2D& basis, const NonStatParams& p) {
  const Eigen::MatrixXd a = dense_operator(g, basis, p);
  return g.cell_area() * a.transpose() * a;
}

inline double log_mvn(const Eigen::VectorXd& y, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::VectorXd r = llt.matrixL().solve(y - mean);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (r.squaredNorm() + logdet + static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi));
}

// Covariance of all observations: block-diagonal over replicates in the
// field part, plus X X^T / tau_beta (single replicate) and the nugget.
inline Eigen::MatrixXd dense_obs_covariance(const Grid& g, const Eigen::MatrixXd& q_inv, const Dataset& d,
                                            double tau_beta) {
  const int m = d.size();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(m, m);
  std::vector<int> cells(m);
  for (int i = 0; i < m; ++i) cells[i] = g.locate(d.locations[i]).flat;
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b) {
      if (d.replicate[a] == d.replicate[b]) cov(a, b) += q_inv(cells[a], cells[b]);
    }
  }
  if (d.covariate_count() > 0) cov += d.covariates * d.covariates.transpose() / tau_beta;
  return cov;
}

inline Eigen::VectorXd noise_variance(const NonStatParams& p, const Dataset& d) {
  Eigen::VectorXd v(d.size());
  for (int i = 0; i < d.size(); ++i) v[i] = std::exp(-p.log_tau_noise[d.region[i]]);
  return v;
}

inline double log_marginal(const spdegrf::ModelSpec& spec, const NonStatParams& p, const Dataset& d) {
  const Eigen::MatrixXd q = dense_precision(spec.grid(), spec.field_basis(), p);
  const Eigen::MatrixXd q_inv = q.llt().solve(Eigen::MatrixXd::Identity(q.rows(), q.cols()));
  Eigen::MatrixXd cov = dense_obs_covariance(spec.grid(), q_inv, d, spec.tau_beta());
  cov.diagonal() += noise_variance(p, d);
  return log_mvn(d.y, Eigen::VectorXd::Zero(d.size()), cov);
}

// -log density of test given train under the joint Gaussian, by explicit
// conditioning (Schur complement) rather than a difference of marginals.
inline double conditional_log_score(const spdegrf::ModelSpec& spec, const NonStatParams& p,
                                    const Dataset& train, const Dataset& test) {
  const Dataset joint = Dataset::concat(train, test);
  const Eigen::MatrixXd q = dense_precision(spec.grid(), spec.field_basis(), p);
  const Eigen::MatrixXd q_inv = q.llt().solve(Eigen::MatrixXd::Identity(q.rows(), q.cols()));
  Eigen::MatrixXd cov = dense_obs_covariance(spec.grid(), q_inv, joint, spec.tau_beta());
  cov.diagonal() += noise_variance(p, joint);
  const int a = train.size(), b = test.size();
  const Eigen::MatrixXd s11 = cov.topLeftCorner(a, a);
  const Eigen::MatrixXd s21 = cov.bottomLeftCorner(b, a);
  const Eigen::MatrixXd s22 = cov.bottomRightCorner(b, b);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(b);
  Eigen::MatrixXd cond = s22;
  if (a > 0) {
    const Eigen::LDLT<Eigen::MatrixXd> f(s11);
    mean = s21 * f.solve(train.y);
    cond -= s21 * f.solve(s21.transpose());
  }
  return -log_mvn(test.y, mean, cond);
}

// Kriging at cell c of replicate t: mean and latent variance of u(c) + x^T beta.
struct Kriging {
  double mean = 0.0;
  double variance = 0.0;
};

inline Kriging dense_kriging(const spdegrf::ModelSpec& spec, const NonStatParams& p, const Dataset& d,
                             int cell, int replicate, const Eigen::VectorXd& x) {
  const Grid& g = spec.grid();
  const Eigen::MatrixXd q = dense_precision(g, spec.field_basis(), p);
  const Eigen::MatrixXd q_inv = q.llt().solve(Eigen::MatrixXd::Identity(q.rows(), q.cols()));
  Eigen::MatrixXd cov = dense_obs_covariance(g, q_inv, d, spec.tau_beta());
  cov.diagonal() += noise_variance(p, d);
  Eigen::VectorXd c(d.size());  // Cov(target, y)
  for (int i = 0; i < d.size(); ++i) {
    c[i] = d.replicate[i] == replicate ? q_inv(cell, g.locate(d.locations[i]).flat) : 0.0;
    if (d.covariate_count() > 0) c[i] += x.dot(d.covariates.row(i).transpose()) / spec.tau_beta();
  }
  double prior = q_inv(cell, cell);
  if (x.size() > 0) prior += x.squaredNorm() / spec.tau_beta();
  if (d.size() == 0) return {0.0, prior};
  const Eigen::LDLT<Eigen::MatrixXd> f(cov);
  return {c.dot(f.solve(d.y)), prior - c.dot(f.solve(c))};
}

// CRPS by direct integration of (F - 1{z >= y})^2.
inline double crps_quadrature(double mu, double sigma, double y) {
  // F^2 below y plus (1 - F)^2 above it; splitting at y keeps the integrand smooth.
  static const double x[5] = {0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640, 0.9061798459386640};
  static const double w[5] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665, 0.2369268850561891, 0.2369268850561891};
  auto cdf = [&](double z) { return 0.5 * std::erfc(-(z - mu) / (sigma * std::numbers::sqrt2)); };
  auto panels = [&](double a, double b, bool above) {
    const int n = 2000;
    const double h = (b - a) / n;
    double s = 0.0;
    for (int p = 0; p < n; ++p) {
      const double m = a + (p + 0.5) * h;
      for (int k = 0; k < 5; ++k) {
        const double f = cdf(m + 0.5 * h * x[k]);
        s += w[k] * (above ? (1 - f) * (1 - f) : f * f);
      }
    }
    return 0.5 * h * s;
  };
  const double lo = std::min(y, mu - 12 * sigma), hi = std::max(y, mu + 12 * sigma);
  return panels(lo, y, false) + panels(y, hi, true);
}

// Random small model instance for the property checks.
struct Instance {
  spdegrf::ModelSpec spec;
  NonStatParams params;
  Dataset data;
};

inline Instance random_instance(std::mt19937_64& rng, int max_nx = 12, int max_ny = 10, int max_obs = 50,
                                int max_rep = 3, int max_regions = 2, int max_cov = 2) {
  std::uniform_int_distribution<int> gx(3, max_nx), gy(3, max_ny);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;
  const int nx = gx(rng), ny = gy(rng);
  const double x0 = -5.0 + 10.0 * unit(rng), y0 = -5.0 + 10.0 * unit(rng);
  const double wx = 0.5 * nx * (0.5 + unit(rng)), wy = 0.5 * ny * (0.5 + unit(rng));
  const Grid grid(x0, x0 + wx, y0, y0 + wy, nx, ny);
  const int k = std::uniform_int_distribution<int>(2, 3)(rng);
  const int l = std::uniform_int_distribution<int>(2, 3)(rng);
  const bool stationary = unit(rng) < 0.25;
  std::array<double, 4> tau;
  for (double& t : tau) t = std::exp(-1.0 + 4.0 * unit(rng));
  spdegrf::ModelSpec spec(grid, Basis2D::for_grid(grid, k, l), tau, std::exp(-2.0 + 3.0 * unit(rng)), stationary);

  const int reps = std::uniform_int_distribution<int>(1, max_rep)(rng);
  const int regions = std::uniform_int_distribution<int>(1, max_regions)(rng);
  const int p_cov = reps == 1 ? std::uniform_int_distribution<int>(0, max_cov)(rng) : 0;
  const int m = std::uniform_int_distribution<int>(1, max_obs)(rng);

  NonStatParams params;
  const int nc = spec.coefficients();
  params.alpha[spdegrf::kLogKappa2] = Eigen::VectorXd::Constant(nc, -0.5 + unit(rng)) + 0.3 * Eigen::VectorXd::NullaryExpr(nc, [&] { return normal(rng); });
  params.alpha[spdegrf::kLogGamma] = Eigen::VectorXd::Constant(nc, -0.5 + unit(rng)) + 0.3 * Eigen::VectorXd::NullaryExpr(nc, [&] { return normal(rng); });
  params.alpha[spdegrf::kVx] = 0.4 * Eigen::VectorXd::NullaryExpr(nc, [&] { return normal(rng); });
  params.alpha[spdegrf::kVy] = 0.4 * Eigen::VectorXd::NullaryExpr(nc, [&] { return normal(rng); });
  params.log_tau_noise = Eigen::VectorXd::NullaryExpr(regions, [&] { return 0.5 + 2.0 * unit(rng); });

  Dataset d;
  d.n_replicates = reps;
  d.n_regions = regions;
  d.y.resize(m);
  d.covariates.resize(m, p_cov);
  for (int i = 0; i < m; ++i) {
    d.locations.push_back({x0 + wx * unit(rng), y0 + wy * unit(rng)});
    d.y[i] = normal(rng);
    d.replicate.push_back(std::uniform_int_distribution<int>(0, reps - 1)(rng));
    d.region.push_back(std::uniform_int_distribution<int>(0, regions - 1)(rng));
    for (int a = 0; a < p_cov; ++a) d.covariates(i, a) = a == 0 ? 1.0 : normal(rng);
  }
  return {spec, params, d};
}

// Symmetric positive-definite matrix with a random sparse pattern.
inline Eigen::MatrixXd random_spd(std::mt19937_64& rng, int n, double density) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      if (unit(rng) < density) m(i, j) = m(j, i) = unit(rng) - 0.5;
    }
  }
  for (int i = 0; i < n; ++i) m(i, i) = m.row(i).cwiseAbs().sum() + 0.5 + unit(rng);
  return m;
}

}  // namespace oracle

#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "spdegrf/basis.hpp"
#include "spdegrf/geometry.hpp"
#include "spdegrf/sparse.hpp"

namespace spdegrf {

using RowSparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

enum FieldId : int { kLogKappa2 = 0, kLogGamma = 1, kVx = 2, kVy = 3 };
inline constexpr int kFieldCount = 4;

/// theta = (alpha_1, alpha_2, alpha_3, alpha_4, log_tau_noise...), where the
/// alphas are the basis coefficients of log kappa^2, log gamma, v_x and v_y.
struct NonStatParams {
  std::array<Eigen::VectorXd, kFieldCount> alpha;
  Eigen::VectorXd log_tau_noise;

  int coefficients() const { return static_cast<int>(alpha[0].size()); }
  int regions() const { return static_cast<int>(log_tau_noise.size()); }
  int size() const { return kFieldCount * coefficients() + regions(); }

  Eigen::VectorXd to_vector() const;
  static NonStatParams from_vector(const Eigen::VectorXd& theta, int coefficients, int regions);

  /// Constant fields (every coefficient equal; the basis sums to one).
  static NonStatParams constant(int coefficients, double log_kappa2, double log_gamma, double vx,
                                double vy, const std::vector<double>& log_tau_noise);
};

struct Anisotropy {
  double h11 = 0.0;
  double h12 = 0.0;
  double h22 = 0.0;
};

/// H = gamma I + v v^T.
inline Anisotropy anisotropy(double gamma, double vx, double vy) {
  return {gamma + vx * vx, vx * vy, gamma + vy * vy};
}

/// Coordinates of the evaluation sites of a grid: cell centres and the
/// interior grid lines that carry edge midpoints.
struct GridAxes {
  std::vector<double> center_x;  // nx
  std::vector<double> center_y;  // ny
  std::vector<double> line_x;    // nx - 1 interior vertical lines
  std::vector<double> line_y;    // ny - 1 interior horizontal lines
};

GridAxes grid_axes(const Grid& grid);

/// Non-stationarity fields on the grid.
///
/// East edges separate cells (i, j) and (i, j+1), indexed e = j * ny + i.
/// North edges separate cells (i, j) and (i+1, j), indexed e = j * (ny-1) + i.
struct SpdeFields {
  Eigen::VectorXd kappa2;  // per cell
  Eigen::VectorXd east_gamma, east_vx, east_vy;
  Eigen::VectorXd north_gamma, north_vx, north_vy;
};

SpdeFields eval_spde_fields(const NonStatParams& params, const Basis2D& basis, const Grid& grid);

/// Values multiplying each stencil term: kappa^2 at cells, H11 and H12 on east
/// edges, H22 and H12 on north edges. A is linear in these.
struct StencilCoefficients {
  Eigen::VectorXd kappa2;
  Eigen::VectorXd east_h11, east_h12;
  Eigen::VectorXd north_h22, north_h12;
};

StencilCoefficients stencil_coefficients(const SpdeFields& fields);

struct SpdeOperator {
  RowSparseMatrix a;
  double cell_area = 0.0;
};

/// Finite-volume discretization of kappa^2 - div(H grad) with zero flux
/// through the domain boundary.
SpdeOperator assemble_A(const StencilCoefficients& coefficients, const Grid& grid);
SpdeOperator assemble_A(const SpdeFields& fields, const Grid& grid);

/// Q = A^T A V, built from its lower triangle so that Q == Q^T exactly.
SparseMatrix assemble_Q(const SpdeOperator& op);

/// Q for the given parameters; convenience wrapper over the three steps above.
SparseMatrix precision_matrix(const NonStatParams& params, const Basis2D& basis, const Grid& grid);

/// dQ / d theta_which, with theta laid out as in NonStatParams::to_vector.
/// Noise parameters yield an all-zero matrix on Q's pattern.
SparseMatrix assemble_dQ(const NonStatParams& params, const Basis2D& basis, const Grid& grid,
                         int which);

/// For symmetric M on Q's pattern, the derivatives of (1/2) Tr(M dQ) with
/// respect to every stencil coefficient.
StencilCoefficients stencil_sensitivity(const SpdeOperator& op, const SparseMatrix& m,
                                        const Grid& grid);

/// Chains stencil sensitivities through the field parametrization to the
/// 4 * coefficients alpha entries of theta.
Eigen::VectorXd alpha_gradient(const StencilCoefficients& sensitivity, const SpdeFields& fields,
                               const Basis2D& basis, const Grid& grid);

}  // namespace spdegrf

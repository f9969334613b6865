#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "spdegrf/geometry.hpp"

namespace spdegrf {

/// Quadratic B-spline basis on [A, B] with zero end-derivatives.
///
/// The interval is split into n_fun uniform spans. The two exterior splines
/// that overlap the interval are reflected into (added onto) their boundary
/// neighbours, so every function satisfies g'(A) = g'(B) = 0 and the basis
/// still sums to one.
class Basis1D {
 public:
  using Piece = std::array<double, 3>;  // c0 + c1 t + c2 t^2, t in [0, 1]

  Basis1D(int n_fun, double lower, double upper);

  /// Single constant function on [A, B]; used by stationary models.
  static Basis1D constant(double lower, double upper);

  int size() const { return n_fun_; }
  int spans() const { return n_spans_; }
  double lower() const { return lower_; }
  double upper() const { return upper_; }
  double span_width() const { return width_; }
  std::vector<double> knots() const;

  const Piece& piece(int fun, int span) const { return pieces_[fun * n_spans_ + span]; }

  double value(int fun, double x, int derivative = 0) const;

  /// Basis values (or derivatives) at each x, as a len(xs) x size() matrix.
  Eigen::MatrixXd design(std::span<const double> xs, int derivative = 0) const;

 private:
  Basis1D(double lower, double upper);  // constant

  int n_fun_ = 0;
  int n_spans_ = 0;
  double lower_ = 0.0;
  double upper_ = 0.0;
  double width_ = 0.0;
  std::vector<Piece> pieces_;

  int span_of(double x, double& t) const;
};

Basis1D build_basis_1d(int n_fun, double lower, double upper);

struct GramMatrices {
  Eigen::MatrixXd m0;  // <g_i, g_j>
  Eigen::MatrixXd m1;  // <g_i', g_j'>
  Eigen::MatrixXd m2;  // <g_i'', g_j''>
};

GramMatrices gram_matrices(const Basis1D& basis);

/// Tensor-product basis f_ij(x, y) = g_i(x) h_j(y).
///
/// Coefficients are stacked row-wise over the k x l coefficient matrix, so
/// alpha_ij sits at index i * l + j.
class Basis2D {
 public:
  Basis2D(Basis1D bx, Basis1D by) : bx_(std::move(bx)), by_(std::move(by)) {}

  /// k x l basis spanning the grid's domain.
  static Basis2D for_grid(const Grid& grid, int k, int l);
  /// The constant function on the grid's domain.
  static Basis2D constant(const Grid& grid);

  const Basis1D& bx() const { return bx_; }
  const Basis1D& by() const { return by_; }
  int size() const { return bx_.size() * by_.size(); }
  int index(int i, int j) const { return i * by_.size() + j; }

  double value(int index, Point p) const;

  /// Field values sum_ij alpha_ij f_ij on the tensor grid xs x ys, returned as
  /// a len(ys) x len(xs) column-major matrix (flat index j * len(ys) + i).
  Eigen::MatrixXd eval_tensor(const Eigen::VectorXd& coeffs, std::span<const double> xs,
                              std::span<const double> ys) const;

  /// Sum over the tensor grid of weights(i, j) * f_pq(xs[j], ys[i]) for every
  /// basis function; the transpose of eval_tensor.
  Eigen::VectorXd contract_tensor(const Eigen::MatrixXd& weights, std::span<const double> xs,
                                  std::span<const double> ys) const;

  bool covers(const Grid& grid) const;

 private:
  Basis1D bx_;
  Basis1D by_;
};

Eigen::VectorXd eval_field(const Basis2D& basis, const Eigen::VectorXd& coeffs,
                           std::span<const Point> points);

struct RW2Penalty {
  Eigen::MatrixXd q;
  int rank = 0;

  double quadratic_form(const Eigen::VectorXd& alpha) const { return alpha.dot(q * alpha); }
};

/// Q = G2 (x) H0 + 2 G1 (x) H1 + G0 (x) H2, the Gram matrix of the Laplacians
/// of the tensor basis functions.
RW2Penalty rw2_precision(const Basis2D& basis);

}  // namespace spdegrf

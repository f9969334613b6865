#include "spdegrf/basis.hpp"

#include <algorithm>
#include <cmath>

#include "spdegrf/errors.hpp"

namespace spdegrf {

namespace {

using Piece = Basis1D::Piece;

// Uniform quadratic B-spline pieces on its three spans, local t in [0, 1].
constexpr std::array<Piece, 3> kBSplinePieces = {{
    {0.0, 0.0, 0.5},
    {0.5, 1.0, -1.0},
    {0.5, -1.0, 0.5},
}};

// Derivative of a local piece with respect to x, as polynomial coefficients in t.
std::array<double, 3> derivative_poly(const Piece& p, int order, double h) {
  switch (order) {
    case 0:
      return p;
    case 1:
      return {p[1] / h, 2.0 * p[2] / h, 0.0};
    default:
      return {2.0 * p[2] / (h * h), 0.0, 0.0};
  }
}

double integrate_product(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double sum = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) sum += a[i] * b[j] / (i + j + 1);
  }
  return sum;
}

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

}  // namespace

Basis1D::Basis1D(int n_fun, double lower, double upper)
    : n_fun_(n_fun), n_spans_(n_fun), lower_(lower), upper_(upper) {
  if (n_fun < 2) throw InvalidBasisError("a 1-D basis needs at least 2 functions");
  if (!(upper > lower)) throw InvalidBasisError("basis interval must satisfy upper > lower");
  width_ = (upper - lower) / n_spans_;
  pieces_.assign(static_cast<std::size_t>(n_fun_) * n_spans_, Piece{0.0, 0.0, 0.0});

  // Spline s (s = 0 .. m+1) covers spans s-2, s-1, s. Splines 0 and m+1 lie
  // mostly outside [A, B] and are folded onto splines 1 and m.
  const int m = n_spans_;
  for (int s = 0; s <= m + 1; ++s) {
    const int fun = std::clamp(s - 1, 0, n_fun_ - 1);
    for (int k = 0; k < 3; ++k) {
      const int span = s - 2 + k;
      if (span < 0 || span >= m) continue;
      Piece& target = pieces_[fun * n_spans_ + span];
      for (int c = 0; c < 3; ++c) target[c] += kBSplinePieces[k][c];
    }
  }
}

Basis1D::Basis1D(double lower, double upper)
    : n_fun_(1), n_spans_(1), lower_(lower), upper_(upper), width_(upper - lower) {
  if (!(upper > lower)) throw InvalidBasisError("basis interval must satisfy upper > lower");
  pieces_ = {Piece{1.0, 0.0, 0.0}};
}

Basis1D Basis1D::constant(double lower, double upper) { return Basis1D(lower, upper); }

std::vector<double> Basis1D::knots() const {
  std::vector<double> k(n_spans_ + 1);
  for (int s = 0; s <= n_spans_; ++s) k[s] = lower_ + s * width_;
  k.back() = upper_;
  return k;
}

int Basis1D::span_of(double x, double& t) const {
  const double u = (x - lower_) / width_;
  const int span = std::clamp(static_cast<int>(std::floor(u)), 0, n_spans_ - 1);
  t = u - span;
  return span;
}

double Basis1D::value(int fun, double x, int derivative) const {
  double t = 0.0;
  const int span = span_of(x, t);
  const auto p = derivative_poly(piece(fun, span), derivative, width_);
  return p[0] + t * (p[1] + t * p[2]);
}

Eigen::MatrixXd Basis1D::design(std::span<const double> xs, int derivative) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(xs.size()), n_fun_);
  for (std::size_t r = 0; r < xs.size(); ++r) {
    double t = 0.0;
    const int span = span_of(xs[r], t);
    for (int f = 0; f < n_fun_; ++f) {
      const auto p = derivative_poly(piece(f, span), derivative, width_);
      out(static_cast<Eigen::Index>(r), f) = p[0] + t * (p[1] + t * p[2]);
    }
  }
  return out;
}

Basis1D build_basis_1d(int n_fun, double lower, double upper) {
  return Basis1D(n_fun, lower, upper);
}

GramMatrices gram_matrices(const Basis1D& basis) {
  const int n = basis.size();
  const double h = basis.span_width();
  GramMatrices g{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n),
                 Eigen::MatrixXd::Zero(n, n)};
  Eigen::MatrixXd* out[3] = {&g.m0, &g.m1, &g.m2};
  for (int order = 0; order < 3; ++order) {
    for (int a = 0; a < n; ++a) {
      for (int b = a; b < n; ++b) {
        double sum = 0.0;
        for (int s = 0; s < basis.spans(); ++s) {
          sum += h * integrate_product(derivative_poly(basis.piece(a, s), order, h),
                                       derivative_poly(basis.piece(b, s), order, h));
        }
        (*out[order])(a, b) = sum;
        (*out[order])(b, a) = sum;
      }
    }
  }
  return g;
}

Basis2D Basis2D::for_grid(const Grid& grid, int k, int l) {
  return Basis2D(Basis1D(k, grid.x_min(), grid.x_max()), Basis1D(l, grid.y_min(), grid.y_max()));
}

Basis2D Basis2D::constant(const Grid& grid) {
  return Basis2D(Basis1D::constant(grid.x_min(), grid.x_max()),
                 Basis1D::constant(grid.y_min(), grid.y_max()));
}

double Basis2D::value(int index, Point p) const {
  const int l = by_.size();
  return bx_.value(index / l, p.x) * by_.value(index % l, p.y);
}

Eigen::MatrixXd Basis2D::eval_tensor(const Eigen::VectorXd& coeffs, std::span<const double> xs,
                                     std::span<const double> ys) const {
  if (coeffs.size() != size()) {
    throw DimensionError("coefficient vector has length " + std::to_string(coeffs.size()) +
                         ", basis has " + std::to_string(size()) + " functions");
  }
  const Eigen::MatrixXd gx = bx_.design(xs);
  const Eigen::MatrixXd hy = by_.design(ys);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      alpha(coeffs.data(), bx_.size(), by_.size());
  return hy * alpha.transpose() * gx.transpose();
}

Eigen::VectorXd Basis2D::contract_tensor(const Eigen::MatrixXd& weights,
                                         std::span<const double> xs,
                                         std::span<const double> ys) const {
  const Eigen::MatrixXd gx = bx_.design(xs);
  const Eigen::MatrixXd hy = by_.design(ys);
  const Eigen::MatrixXd m = gx.transpose() * weights.transpose() * hy;  // k x l
  Eigen::VectorXd out(size());
  for (int i = 0; i < bx_.size(); ++i) {
    for (int j = 0; j < by_.size(); ++j) out(index(i, j)) = m(i, j);
  }
  return out;
}

bool Basis2D::covers(const Grid& grid) const {
  constexpr double tol = 1e-9;
  const double sx = tol * std::max(1.0, std::abs(grid.x_max() - grid.x_min()));
  const double sy = tol * std::max(1.0, std::abs(grid.y_max() - grid.y_min()));
  return bx_.lower() <= grid.x_min() + sx && bx_.upper() >= grid.x_max() - sx &&
         by_.lower() <= grid.y_min() + sy && by_.upper() >= grid.y_max() - sy;
}

Eigen::VectorXd eval_field(const Basis2D& basis, const Eigen::VectorXd& coeffs,
                           std::span<const Point> points) {
  if (coeffs.size() != basis.size()) {
    throw DimensionError("coefficient vector has length " + std::to_string(coeffs.size()) +
                         ", basis has " + std::to_string(basis.size()) + " functions");
  }
  const int k = basis.bx().size();
  const int l = basis.by().size();
  Eigen::VectorXd out(static_cast<Eigen::Index>(points.size()));
  std::vector<double> gx(k), hy(l);
  for (std::size_t r = 0; r < points.size(); ++r) {
    for (int i = 0; i < k; ++i) gx[i] = basis.bx().value(i, points[r].x);
    for (int j = 0; j < l; ++j) hy[j] = basis.by().value(j, points[r].y);
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
      if (gx[i] == 0.0) continue;
      double row = 0.0;
      for (int j = 0; j < l; ++j) row += coeffs(basis.index(i, j)) * hy[j];
      sum += gx[i] * row;
    }
    out(static_cast<Eigen::Index>(r)) = sum;
  }
  return out;
}

RW2Penalty rw2_precision(const Basis2D& basis) {
  const GramMatrices g = gram_matrices(basis.bx());
  const GramMatrices h = gram_matrices(basis.by());
  RW2Penalty out;
  out.q = kron(g.m2, h.m0) + 2.0 * kron(g.m1, h.m1) + kron(g.m0, h.m2);
  out.rank = basis.size() - 1;
  return out;
}

}  // namespace spdegrf

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "spdegrf/basis.hpp"
#include "spdegrf/errors.hpp"

using namespace spdegrf;

namespace {

// 5-point Gauss-Legendre on [a, b].
template <class F>
double gauss5(F f, double a, double b) {
  static const double x[5] = {0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                              0.9061798459386640};
  static const double w[5] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                              0.2369268850561891, 0.2369268850561891};
  const double m = 0.5 * (a + b), h = 0.5 * (b - a);
  double s = 0.0;
  for (int k = 0; k < 5; ++k) s += w[k] * f(m + h * x[k]);
  return h * s;
}

// Composite rule over a fine uniform partition (several panels per span).
template <class F>
double integrate(F f, double a, double b, int panels) {
  double s = 0.0;
  const double h = (b - a) / panels;
  for (int p = 0; p < panels; ++p) s += gauss5(f, a + p * h, a + (p + 1) * h);
  return s;
}

}  // namespace

TEST(Basis1D, RejectsTooFewFunctions) {
  EXPECT_THROW(build_basis_1d(1, 0, 1), InvalidBasisError);
  EXPECT_THROW(build_basis_1d(3, 1, 1), InvalidBasisError);
}

TEST(Basis1D, TwoFunctionsSumToOneWithFlatEnds) {
  const Basis1D b = build_basis_1d(2, 0, 1);
  for (double x = 0.0; x <= 1.0; x += 0.01) {
    EXPECT_NEAR(b.value(0, x) + b.value(1, x), 1.0, 1e-14);
  }
  for (int f = 0; f < 2; ++f) {
    EXPECT_NEAR(b.value(f, 0.0, 1), 0.0, 1e-14);
    EXPECT_NEAR(b.value(f, 1.0, 1), 0.0, 1e-14);
  }
}

TEST(Basis1D, EightFunctionsOverUsLongitudes) {
  const Basis1D b = build_basis_1d(8, -130.15, -60.85);
  EXPECT_EQ(b.size(), 8);
  EXPECT_NEAR(b.span_width(), 69.3 / 8, 1e-12);
  for (double x = -130.15; x <= -60.85; x += 0.7) {
    double s = 0.0;
    for (int f = 0; f < 8; ++f) s += b.value(f, x);
    EXPECT_NEAR(s, 1.0, 1e-13);
  }
}

TEST(Basis1D, EndpointDerivativesVanishByFiniteDifference) {
  for (int n : {2, 3, 5, 8}) {
    const Basis1D b = build_basis_1d(n, -1.5, 2.5);
    // Second-order one-sided stencils are exact on the end spans (quadratics).
    const double h = 1e-3 * b.span_width();
    for (int f = 0; f < n; ++f) {
      const double left = (-3 * b.value(f, -1.5) + 4 * b.value(f, -1.5 + h) - b.value(f, -1.5 + 2 * h)) / (2 * h);
      const double right = (3 * b.value(f, 2.5) - 4 * b.value(f, 2.5 - h) + b.value(f, 2.5 - 2 * h)) / (2 * h);
      EXPECT_NEAR(left, 0.0, 1e-10) << "n=" << n << " f=" << f;
      EXPECT_NEAR(right, 0.0, 1e-10) << "n=" << n << " f=" << f;
    }
  }
}

TEST(Basis1D, ContinuouslyDifferentiableAtKnots) {
  const Basis1D b = build_basis_1d(6, 0, 3);
  const auto knots = b.knots();
  for (std::size_t k = 1; k + 1 < knots.size(); ++k) {
    for (int f = 0; f < 6; ++f) {
      const double e = 1e-9;
      EXPECT_NEAR(b.value(f, knots[k] - e), b.value(f, knots[k] + e), 1e-8);
      EXPECT_NEAR(b.value(f, knots[k] - e, 1), b.value(f, knots[k] + e, 1), 1e-7);
    }
  }
}

TEST(Basis1D, DerivativesMatchFiniteDifferences) {
  const Basis1D b = build_basis_1d(5, -2, 3);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.9, 2.9);
  for (int trial = 0; trial < 50; ++trial) {
    const double x = u(rng);
    const double h = 1e-6;
    for (int f = 0; f < 5; ++f) {
      EXPECT_NEAR(b.value(f, x, 1), (b.value(f, x + h) - b.value(f, x - h)) / (2 * h), 1e-6);
    }
  }
}

TEST(Gram, RowSumsAndNullSpace) {
  const Basis1D b = build_basis_1d(7, -1, 4);
  const GramMatrices g = gram_matrices(b);
  for (int i = 0; i < 7; ++i) {
    const double integral = integrate([&](double x) { return b.value(i, x); }, -1, 4, 70);
    EXPECT_NEAR(g.m0.row(i).sum(), integral, 1e-12);
  }
  EXPECT_LT((g.m2 * Eigen::VectorXd::Ones(7)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((g.m1 * Eigen::VectorXd::Ones(7)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gram, EntriesMatchQuadrature) {
  for (int n : {2, 4, 9}) {
    const Basis1D b = build_basis_1d(n, 0.5, 3.0);
    const GramMatrices g = gram_matrices(b);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        for (int d = 0; d <= 2; ++d) {
          const double q = integrate([&](double x) { return b.value(i, x, d) * b.value(j, x, d); },
                                     0.5, 3.0, 10 * n);
          const Eigen::MatrixXd& m = d == 0 ? g.m0 : d == 1 ? g.m1 : g.m2;
          EXPECT_NEAR(m(i, j), q, 1e-10) << "n=" << n << " d=" << d;
        }
      }
    }
  }
}

TEST(EvalField, ConstantsAndDirectSum) {
  const Grid grid = build_grid({-1, 2, 0, 5}, 6, 5);
  const Basis2D basis = Basis2D::for_grid(grid, 4, 3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(-1, 2), uy(0, 5);
  std::normal_distribution<double> normal;
  std::vector<Point> pts;
  for (int i = 0; i < 40; ++i) pts.push_back({ux(rng), uy(rng)});

  const Eigen::VectorXd ones = eval_field(basis, Eigen::VectorXd::Ones(12), pts);
  const Eigen::VectorXd zeros = eval_field(basis, Eigen::VectorXd::Zero(12), pts);
  EXPECT_LT((ones.array() - 1.0).abs().maxCoeff(), 1e-14);
  EXPECT_EQ(zeros.cwiseAbs().maxCoeff(), 0.0);

  Eigen::VectorXd alpha(12);
  for (auto& a : alpha) a = normal(rng);
  const Eigen::VectorXd got = eval_field(basis, alpha, pts);
  for (std::size_t p = 0; p < pts.size(); ++p) {
    double s = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j)
        s += alpha[i * 3 + j] * basis.bx().value(i, pts[p].x) * basis.by().value(j, pts[p].y);
    EXPECT_NEAR(got[p], s, 1e-12);
  }
  EXPECT_THROW(eval_field(basis, Eigen::VectorXd::Ones(11), pts), DimensionError);
}

TEST(EvalTensor, ContractIsTranspose) {
  const Grid grid = build_grid({0, 4, 0, 3}, 8, 6);
  const Basis2D basis = Basis2D::for_grid(grid, 3, 4);
  const std::vector<double> xs{0.1, 0.9, 1.7, 2.2, 3.9};
  const std::vector<double> ys{0.2, 1.4, 2.8};
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  Eigen::VectorXd alpha(12);
  for (auto& a : alpha) a = normal(rng);
  Eigen::MatrixXd w(3, 5);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) w(i, j) = normal(rng);
  const Eigen::MatrixXd f = basis.eval_tensor(alpha, xs, ys);
  const Eigen::VectorXd c = basis.contract_tensor(w, xs, ys);
  EXPECT_NEAR((f.array() * w.array()).sum(), alpha.dot(c), 1e-12);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) {
      EXPECT_NEAR(f(i, j), eval_field(basis, alpha, std::vector<Point>{{xs[j], ys[i]}})[0], 1e-13);
    }
}

namespace {

// Brute-force <Lap f_a, Lap f_b> over the rectangle, panel by panel.
double laplacian_inner(const Basis2D& basis, int a, int b, int panels) {
  const Basis1D& gx = basis.bx();
  const Basis1D& gy = basis.by();
  const int ia = a / gy.size(), ja = a % gy.size();
  const int ib = b / gy.size(), jb = b % gy.size();
  auto lap = [&](int i, int j, double x, double y) {
    return gx.value(i, x, 2) * gy.value(j, y) + gx.value(i, x) * gy.value(j, y, 2);
  };
  const double hx = (gx.upper() - gx.lower()) / panels;
  const double hy = (gy.upper() - gy.lower()) / panels;
  double s = 0.0;
  for (int px = 0; px < panels; ++px) {
    for (int py = 0; py < panels; ++py) {
      const double x0 = gx.lower() + px * hx, y0 = gy.lower() + py * hy;
      s += gauss5([&](double x) {
        return gauss5([&](double y) { return lap(ia, ja, x, y) * lap(ib, jb, x, y); }, y0, y0 + hy);
      }, x0, x0 + hx);
    }
  }
  return s;
}

}  // namespace

TEST(Rw2, TwoByTwoMatchesBruteForce) {
  const Grid grid = build_grid({0, 2, -1, 1.5}, 5, 5);
  const Basis2D basis = Basis2D::for_grid(grid, 2, 2);
  const RW2Penalty pen = rw2_precision(basis);
  ASSERT_EQ(pen.q.rows(), 4);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) EXPECT_NEAR(pen.q(a, b), laplacian_inner(basis, a, b, 4), 1e-10);
}

TEST(Rw2, NullSpaceAndRank) {
  const Grid grid = build_grid({0, 3, 0, 2}, 9, 6);
  for (auto [k, l] : {std::pair{2, 2}, std::pair{3, 3}, std::pair{4, 2}, std::pair{6, 5}}) {
    const RW2Penalty pen = rw2_precision(Basis2D::for_grid(grid, k, l));
    EXPECT_LT((pen.q * Eigen::VectorXd::Ones(k * l)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_EQ(pen.rank, k * l - 1);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pen.q);
    const Eigen::VectorXd ev = es.eigenvalues();
    const double tol = 1e-10 * ev.maxCoeff();
    EXPECT_LE(std::abs(ev[0]), tol);
    EXPECT_GT(ev[1], tol);
    EXPECT_LT((pen.q - pen.q.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  }
}

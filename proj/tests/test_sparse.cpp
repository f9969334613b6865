#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "spdegrf/errors.hpp"
#include "spdegrf/sparse.hpp"
#include "spdegrf/spde.hpp"

using namespace spdegrf;

namespace {

SparseMatrix sparse_of(const Eigen::MatrixXd& m) { return m.sparseView(0.0, 0.0); }

SparseMatrix laplacian_2d(int nx, int ny, double shift) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(nx * ny, nx * ny);
  for (int j = 0; j < nx; ++j) {
    for (int i = 0; i < ny; ++i) {
      const int c = j * ny + i;
      m(c, c) = 4.0 + shift;
      if (i + 1 < ny) m(c, c + 1) = m(c + 1, c) = -1.0;
      if (j + 1 < nx) m(c, c + ny) = m(c + ny, c) = -1.0;
    }
  }
  return sparse_of(m);
}

SparseMatrix tridiagonal(int n) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    m(i, i) = 3.0 + 0.1 * i;
    if (i + 1 < n) m(i, i + 1) = m(i + 1, i) = -1.0 + 0.05 * i;
  }
  return sparse_of(m);
}

double dense_logdet(const Eigen::MatrixXd& m) {
  const Eigen::LLT<Eigen::MatrixXd> llt(m);
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// Checks every stored entry of the partial inverse against the dense inverse.
void expect_partial_inverse(const SparseMatrix& m, double tol) {
  const CholeskyFactor f = CholeskyFactor::factorize(m, SymbolicPattern::analyze(m));
  const PartialInverse s(f);
  const Eigen::MatrixXd inv = Eigen::MatrixXd(m).inverse();
  const SymbolicPattern& sym = f.symbolic();
  int checked = 0;
  for (int col = 0; col < sym.size(); ++col) {
    for (int p = sym.col_ptr()[col]; p < sym.col_ptr()[col + 1]; ++p) {
      const int r = sym.perm()[sym.row_idx()[p]];
      const int c = sym.perm()[col];
      ASSERT_TRUE(s.find(r, c).has_value());
      ASSERT_TRUE(s.find(c, r).has_value());
      EXPECT_NEAR(*s.find(r, c), inv(r, c), tol);
      ++checked;
    }
  }
  EXPECT_EQ(checked, sym.factor_nonzeros());
  // Every nonzero of M lies on the pattern.
  for (int col = 0; col < m.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(m, col); it; ++it) {
      EXPECT_TRUE(s.find(static_cast<int>(it.row()), col).has_value());
    }
  }
}

}  // namespace

TEST(Symbolic, DiagonalHasNoFill) {
  const SparseMatrix d = sparse_of(Eigen::VectorXd::LinSpaced(10, 1, 10).asDiagonal().toDenseMatrix());
  const SymbolicPattern s = SymbolicPattern::analyze(d);
  EXPECT_EQ(s.factor_nonzeros(), 10);
}

TEST(Symbolic, TridiagonalNaturalOrderHasNoFill) {
  const SparseMatrix t = tridiagonal(12);
  const SymbolicPattern s = SymbolicPattern::analyze(t, Ordering::Natural);
  EXPECT_EQ(s.factor_nonzeros(), 12 + 11);
  for (int k = 0; k < 12; ++k) EXPECT_EQ(s.perm()[k], k);
}

TEST(Symbolic, AmdBeatsNaturalOnGrid) {
  const SparseMatrix m = laplacian_2d(10, 10, 0.1);
  const long amd = SymbolicPattern::analyze(m, Ordering::Amd).factor_nonzeros();
  const long natural = SymbolicPattern::analyze(m, Ordering::Natural).factor_nonzeros();
  EXPECT_LT(amd, natural);
}

TEST(Symbolic, PatternCountMatchesDenseFactor) {
  // With generic values, structural fill equals numerical fill.
  const SparseMatrix m = laplacian_2d(6, 5, 0.3);
  const SymbolicPattern s = SymbolicPattern::analyze(m, Ordering::Natural);
  const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(Eigen::MatrixXd(m)).matrixL();
  long nnz = 0;
  for (int c = 0; c < l.cols(); ++c)
    for (int r = c; r < l.rows(); ++r) nnz += std::abs(l(r, c)) > 1e-14;
  EXPECT_EQ(s.factor_nonzeros(), nnz);
}

TEST(Symbolic, RejectsAsymmetricPattern) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(4, 4);
  m(0, 2) = 1.0;
  EXPECT_THROW(SymbolicPattern::analyze(sparse_of(m)), InvalidArgumentError);
}

TEST(Symbolic, TrailingRowsStayLast) {
  Eigen::MatrixXd m = Eigen::MatrixXd(laplacian_2d(5, 4, 0.5));
  const int n = static_cast<int>(m.rows());
  Eigen::MatrixXd big = Eigen::MatrixXd::Identity(n + 2, n + 2) * 50.0;
  big.topLeftCorner(n, n) = m;
  big.block(n, 0, 2, n).setConstant(0.1);
  big.block(0, n, n, 2).setConstant(0.1);
  const SymbolicPattern s = SymbolicPattern::analyze(sparse_of(big), Ordering::Amd, 2);
  EXPECT_EQ(s.perm()[n], n);
  EXPECT_EQ(s.perm()[n + 1], n + 1);
}

TEST(Cholesky, IdentityAndTwoByTwo) {
  const SparseMatrix id = sparse_of(Eigen::MatrixXd::Identity(5, 5));
  const CholeskyFactor f = CholeskyFactor::factorize(id, SymbolicPattern::analyze(id));
  EXPECT_DOUBLE_EQ(f.log_det(), 0.0);
  for (double v : f.values()) EXPECT_DOUBLE_EQ(v, 1.0);

  Eigen::Matrix2d m;
  m << 4, 2, 2, 3;
  const SparseMatrix s = sparse_of(m);
  EXPECT_NEAR(CholeskyFactor::factorize(s, SymbolicPattern::analyze(s)).log_det(), std::log(8.0), 1e-15);
}

TEST(Cholesky, RandomSpdLogDetAndSolve) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::MatrixXd m = oracle::random_spd(rng, 50, 0.1);
    const SparseMatrix s = sparse_of(m);
    const CholeskyFactor f = CholeskyFactor::factorize(s, SymbolicPattern::analyze(s));
    const double ref = dense_logdet(m);
    EXPECT_NEAR(f.log_det(), ref, 1e-9 * std::abs(ref));
    EXPECT_LT((f.reconstruct_dense() - m).cwiseAbs().maxCoeff(), 1e-12 * m.cwiseAbs().maxCoeff());

    Eigen::VectorXd b(50);
    for (auto& v : b) v = normal(rng);
    const Eigen::VectorXd x = f.solve(b);
    EXPECT_LT((m * x - b).norm() / b.norm(), 1e-10);
    EXPECT_EQ(f.solve(Eigen::VectorXd::Zero(50)).cwiseAbs().maxCoeff(), 0.0);

    Eigen::MatrixXd bm(50, 3);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 50; ++r) bm(r, c) = normal(rng);
    EXPECT_LT((m * f.solve_many(bm) - bm).norm() / bm.norm(), 1e-10);
  }
}

TEST(Cholesky, IdentitySolveReturnsInput) {
  const SparseMatrix id = sparse_of(Eigen::MatrixXd::Identity(7, 7));
  const CholeskyFactor f = CholeskyFactor::factorize(id, SymbolicPattern::analyze(id));
  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(7, -3, 3);
  EXPECT_EQ((f.solve(b) - b).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((f.sample(b) - b).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Cholesky, IndefiniteReportsPivot) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(4, 4);
  m(2, 2) = -1.0;
  const SparseMatrix s = sparse_of(m);
  try {
    CholeskyFactor::factorize(s, SymbolicPattern::analyze(s, Ordering::Natural));
    FAIL() << "expected NotPositiveDefiniteError";
  } catch (const NotPositiveDefiniteError& e) {
    EXPECT_EQ(e.pivot(), 2);
  }
}

TEST(Cholesky, RejectsPatternMismatch) {
  const SparseMatrix a = tridiagonal(6);
  const SparseMatrix b = sparse_of(Eigen::MatrixXd::Identity(6, 6));
  EXPECT_THROW(CholeskyFactor::factorize(b, SymbolicPattern::analyze(a)), Error);
}

TEST(Sample, ScaledIdentityVariance) {
  const SparseMatrix m = sparse_of(4.0 * Eigen::MatrixXd::Identity(3, 3));
  const CholeskyFactor f = CholeskyFactor::factorize(m, SymbolicPattern::analyze(m));
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal;
  const int draws = 100000;
  double sum2 = 0.0;
  for (int d = 0; d < draws; ++d) {
    Eigen::VectorXd z(3);
    for (auto& v : z) v = normal(rng);
    sum2 += f.sample(z).squaredNorm();
  }
  const double var = sum2 / (3.0 * draws);
  // Standard error of a variance estimate from n normal draws: sigma^2 sqrt(2/n).
  EXPECT_NEAR(var, 0.25, 3.0 * 0.25 * std::sqrt(2.0 / (3.0 * draws)));
}

TEST(Sample, GridCovarianceMatchesInverse) {
  const Grid grid = build_grid({0, 4, 0, 3}, 4, 3);
  const NonStatParams p = NonStatParams::constant(1, 0.5, -0.2, 0.3, -0.2, {0.0});
  const SparseMatrix q = precision_matrix(p, Basis2D::constant(grid), grid);
  const CholeskyFactor f = CholeskyFactor::factorize(q, SymbolicPattern::analyze(q));
  const Eigen::MatrixXd cov = Eigen::MatrixXd(q).inverse();
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal;
  const int draws = 10000;
  const int n = grid.size();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
  for (int d = 0; d < draws; ++d) {
    Eigen::VectorXd z(n);
    for (auto& v : z) v = normal(rng);
    const Eigen::VectorXd u = f.sample(z);
    acc += u * u.transpose();
  }
  acc /= draws;
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      const double se = std::sqrt((cov(a, a) * cov(b, b) + cov(a, b) * cov(a, b)) / draws);
      EXPECT_NEAR(acc(a, b), cov(a, b), 4.5 * se) << a << "," << b;
    }
  }
}

TEST(PartialInverse, DiagonalMatrix) {
  const Eigen::VectorXd d = Eigen::VectorXd::LinSpaced(6, 0.5, 3.0);
  const SparseMatrix m = sparse_of(d.asDiagonal().toDenseMatrix());
  const PartialInverse s(CholeskyFactor::factorize(m, SymbolicPattern::analyze(m)));
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(s(i, i), 1.0 / d[i], 1e-15);
  EXPECT_FALSE(s.find(0, 1).has_value());
  EXPECT_THROW(s(0, 1), Error);
}

TEST(PartialInverse, TridiagonalMatchesDense) { expect_partial_inverse(tridiagonal(6), 1e-10); }

TEST(PartialInverse, RandomSparseSpdMatchesDense) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    expect_partial_inverse(sparse_of(oracle::random_spd(rng, 40, 0.08)), 1e-9);
  }
}

TEST(PartialInverse, GridPrecisionDiagonal) {
  const Grid grid = build_grid({0, 12, 0, 10}, 12, 10);
  const NonStatParams p = NonStatParams::constant(1, -0.4, 0.1, 0.5, 0.2, {0.0});
  const SparseMatrix q = precision_matrix(p, Basis2D::constant(grid), grid);
  const PartialInverse s(CholeskyFactor::factorize(q, SymbolicPattern::analyze(q)));
  const Eigen::VectorXd ref = Eigen::MatrixXd(q).inverse().diagonal();
  EXPECT_LT(((s.diagonal() - ref).array() / ref.array()).abs().maxCoeff(), 1e-9);
  expect_partial_inverse(q, 1e-9 * ref.maxCoeff());
}

TEST(PartialInverse, TraceProduct) {
  std::mt19937_64 rng(12);
  const Eigen::MatrixXd m = oracle::random_spd(rng, 30, 0.15);
  const SparseMatrix s = sparse_of(m);
  const PartialInverse inv(CholeskyFactor::factorize(s, SymbolicPattern::analyze(s)));
  // B on M's pattern with unrelated values.
  std::uniform_real_distribution<double> u(-1, 1);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(30, 30);
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j <= i; ++j)
      if (m(i, j) != 0.0) b(i, j) = b(j, i) = u(rng);
  const double ref = (m.inverse() * b).trace();
  EXPECT_NEAR(inv.trace_product(sparse_of(b)), ref, 1e-8 * std::max(1.0, std::abs(ref)));
}

TEST(SymmetricFromLower, ExactMirror) {
  std::vector<Eigen::Triplet<double>> t{{0, 0, 1.0}, {2, 0, 0.3}, {2, 0, 0.2}, {1, 1, 2.0}, {2, 2, 3.0}};
  const SparseMatrix m = symmetric_from_lower(3, t);
  EXPECT_EQ(m.coeff(0, 2), m.coeff(2, 0));
  EXPECT_DOUBLE_EQ(m.coeff(2, 0), 0.5);
  EXPECT_EQ(m.nonZeros(), 5);
}

#pragma once

#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace spdegrf {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

enum class Ordering { Natural, Amd };

/// Fill-reducing permutation, elimination tree and the full pattern of the
/// Cholesky factor of a structurally symmetric matrix.
///
/// Permuted index k holds original row perm()[k]; inverse_perm() maps back.
/// Copies share the underlying structure.
class SymbolicPattern {
 public:
  /// `trailing_fixed` rows at the end keep their position after ordering.
  static SymbolicPattern analyze(const SparseMatrix& pattern, Ordering ordering = Ordering::Amd,
                                 int trailing_fixed = 0);

  int size() const { return s_->n; }
  const std::vector<int>& perm() const { return s_->perm; }
  const std::vector<int>& inverse_perm() const { return s_->pinv; }
  const std::vector<int>& etree() const { return s_->parent; }
  const std::vector<int>& col_ptr() const { return s_->lp; }
  const std::vector<int>& row_idx() const { return s_->li; }
  long factor_nonzeros() const { return static_cast<long>(s_->li.size()); }

  /// True when `m` has exactly the sparsity structure this was built from.
  bool matches(const SparseMatrix& m) const;

 private:
  friend class CholeskyFactor;

  struct Structure {
    int n = 0;
    std::vector<int> perm;
    std::vector<int> pinv;
    std::vector<int> parent;
    std::vector<int> lp;
    std::vector<int> li;
    // Upper triangle of the permuted input, with the position of each entry
    // in the input's value array.
    std::vector<int> cp;
    std::vector<int> ci;
    std::vector<int> csrc;
    std::vector<int> input_outer;
    std::vector<int> input_inner;
  };
  std::shared_ptr<const Structure> s_;
};

/// Lower-triangular L with P M P^T = L L^T.
class CholeskyFactor {
 public:
  static CholeskyFactor factorize(const SparseMatrix& m, const SymbolicPattern& symbolic);

  int size() const { return symbolic_.size(); }
  double log_det() const { return log_det_; }
  const SymbolicPattern& symbolic() const { return symbolic_; }
  const std::vector<double>& values() const { return lx_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve_many(const Eigen::MatrixXd& b) const;

  /// u = P^T L^{-T} z, a draw with precision M when z is standard normal.
  Eigen::VectorXd sample(const Eigen::VectorXd& z) const;

  /// P^T L L^T P as a dense matrix; for checking small factorizations.
  Eigen::MatrixXd reconstruct_dense() const;

 private:
  SymbolicPattern symbolic_;
  std::vector<double> lx_;
  double log_det_ = 0.0;

  void forward(Eigen::VectorXd& x) const;   // x := L^{-1} x (permuted space)
  void backward(Eigen::VectorXd& x) const;  // x := L^{-T} x (permuted space)
};

/// Entries of M^{-1} on the pattern of L + L^T (Takahashi recursions).
class PartialInverse {
 public:
  explicit PartialInverse(const CholeskyFactor& factor);

  int size() const { return symbolic_.size(); }
  /// Entry (row, col) in original indexing, if it lies on the factor pattern.
  std::optional<double> find(int row, int col) const;
  /// As find(), but throws when the entry is off-pattern.
  double operator()(int row, int col) const;
  Eigen::VectorXd diagonal() const;
  /// Tr(M^{-1} B) for B whose pattern lies inside the factor pattern.
  double trace_product(const SparseMatrix& b) const;

 private:
  SymbolicPattern symbolic_;
  std::vector<double> sx_;
};

inline PartialInverse partial_inverse(const CholeskyFactor& factor) {
  return PartialInverse(factor);
}

/// Full symmetric matrix from lower-triangle entries (duplicates summed).
/// Mirrored entries are copied, so the result is exactly symmetric.
SparseMatrix symmetric_from_lower(int n, const std::vector<Eigen::Triplet<double>>& lower);

}  // namespace spdegrf

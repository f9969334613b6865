#include "spdegrf/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/OrderingMethods>

#include "spdegrf/errors.hpp"

namespace spdegrf {

namespace {

// Row pattern of L(k, 0:k-1): nodes reachable from the upper entries of
// column k along the elimination tree. Returns `top`; the nodes are
// stack[top..n) in an order valid for the up-looking factorization.
int ereach(int k, const std::vector<int>& cp, const std::vector<int>& ci,
           const std::vector<int>& parent, std::vector<int>& stack, std::vector<int>& mark) {
  const int n = static_cast<int>(parent.size());
  int top = n;
  mark[k] = k;
  for (int p = cp[k]; p < cp[k + 1]; ++p) {
    int i = ci[p];
    if (i > k) continue;
    int len = 0;
    for (; mark[i] != k; i = parent[i]) {
      stack[len++] = i;
      mark[i] = k;
    }
    while (len > 0) stack[--top] = stack[--len];
  }
  return top;
}

bool has_entry(const SparseMatrix& m, int row, int col) {
  const int* begin = m.innerIndexPtr() + m.outerIndexPtr()[col];
  const int* end = m.innerIndexPtr() + m.outerIndexPtr()[col + 1];
  return std::binary_search(begin, end, row);
}

}  // namespace

SymbolicPattern SymbolicPattern::analyze(const SparseMatrix& input, Ordering ordering,
                                         int trailing_fixed) {
  if (input.rows() != input.cols()) throw DimensionError("symbolic analysis needs a square matrix");
  SparseMatrix m = input;
  m.makeCompressed();
  const int n = static_cast<int>(m.rows());
  if (trailing_fixed < 0 || trailing_fixed > n) {
    throw InvalidArgumentError("trailing_fixed out of range");
  }

  for (int col = 0; col < n; ++col) {
    for (SparseMatrix::InnerIterator it(m, col); it; ++it) {
      if (!has_entry(m, col, static_cast<int>(it.row()))) {
        throw InvalidArgumentError("pattern is not structurally symmetric at (" +
                                   std::to_string(it.row()) + ", " + std::to_string(col) + ")");
      }
    }
  }

  auto s = std::make_shared<Structure>();
  s->n = n;
  s->perm.resize(n);
  std::iota(s->perm.begin(), s->perm.end(), 0);
  const int leading = n - trailing_fixed;
  if (ordering == Ordering::Amd && leading > 1) {
    SparseMatrix lead = m.topLeftCorner(leading, leading);
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> p;
    Eigen::AMDOrdering<int> amd;
    amd(lead, p);
    for (int k = 0; k < leading; ++k) s->perm[k] = p.indices()[k];
  }
  s->pinv.resize(n);
  for (int k = 0; k < n; ++k) s->pinv[s->perm[k]] = k;

  // Upper triangle of P M P^T in compressed columns.
  s->cp.assign(n + 1, 0);
  for (int col = 0; col < n; ++col) {
    for (int p = m.outerIndexPtr()[col]; p < m.outerIndexPtr()[col + 1]; ++p) {
      const int r = s->pinv[m.innerIndexPtr()[p]];
      const int c = s->pinv[col];
      if (r <= c) ++s->cp[c + 1];
    }
  }
  std::partial_sum(s->cp.begin(), s->cp.end(), s->cp.begin());
  s->ci.resize(s->cp[n]);
  s->csrc.resize(s->cp[n]);
  {
    std::vector<int> next(s->cp.begin(), s->cp.end() - 1);
    for (int col = 0; col < n; ++col) {
      for (int p = m.outerIndexPtr()[col]; p < m.outerIndexPtr()[col + 1]; ++p) {
        const int r = s->pinv[m.innerIndexPtr()[p]];
        const int c = s->pinv[col];
        if (r > c) continue;
        s->ci[next[c]] = r;
        s->csrc[next[c]] = p;
        ++next[c];
      }
    }
  }

  // Elimination tree with path compression.
  s->parent.assign(n, -1);
  {
    std::vector<int> ancestor(n, -1);
    for (int k = 0; k < n; ++k) {
      for (int p = s->cp[k]; p < s->cp[k + 1]; ++p) {
        int i = s->ci[p];
        while (i != -1 && i < k) {
          const int next = ancestor[i];
          ancestor[i] = k;
          if (next == -1) {
            s->parent[i] = k;
            break;
          }
          i = next;
        }
      }
    }
  }

  // Factor pattern, one row subtree at a time. Rows end up sorted per column
  // with the diagonal first. Roots of the forest get parent n for ereach.
  std::vector<int> parent_walk(s->parent);
  std::vector<int> stack(n), mark(n, -1);
  std::vector<int> counts(n, 1);
  for (int k = 0; k < n; ++k) {
    const int top = ereach(k, s->cp, s->ci, parent_walk, stack, mark);
    for (int t = top; t < n; ++t) ++counts[stack[t]];
  }
  s->lp.assign(n + 1, 0);
  for (int j = 0; j < n; ++j) s->lp[j + 1] = s->lp[j] + counts[j];
  s->li.resize(s->lp[n]);
  std::vector<int> next(s->lp.begin(), s->lp.end() - 1);
  std::fill(mark.begin(), mark.end(), -1);
  for (int k = 0; k < n; ++k) {
    s->li[next[k]++] = k;
    const int top = ereach(k, s->cp, s->ci, parent_walk, stack, mark);
    for (int t = top; t < n; ++t) s->li[next[stack[t]]++] = k;
  }

  s->input_outer.assign(m.outerIndexPtr(), m.outerIndexPtr() + n + 1);
  s->input_inner.assign(m.innerIndexPtr(), m.innerIndexPtr() + m.nonZeros());

  SymbolicPattern out;
  out.s_ = std::move(s);
  return out;
}

bool SymbolicPattern::matches(const SparseMatrix& m) const {
  if (m.rows() != s_->n || m.cols() != s_->n || !m.isCompressed()) return false;
  if (m.nonZeros() != static_cast<Eigen::Index>(s_->input_inner.size())) return false;
  return std::equal(s_->input_outer.begin(), s_->input_outer.end(), m.outerIndexPtr()) &&
         std::equal(s_->input_inner.begin(), s_->input_inner.end(), m.innerIndexPtr());
}

CholeskyFactor CholeskyFactor::factorize(const SparseMatrix& m, const SymbolicPattern& symbolic) {
  if (!symbolic.matches(m)) {
    throw DimensionError("matrix structure does not match its symbolic analysis");
  }
  const auto& s = *symbolic.s_;
  const int n = s.n;
  const double* values = m.valuePtr();

  CholeskyFactor f;
  f.symbolic_ = symbolic;
  f.lx_.assign(s.li.size(), 0.0);
  std::vector<double> x(n, 0.0);
  std::vector<int> stack(n), mark(n, -1);
  std::vector<int> next(n);
  const std::vector<int>& parent = s.parent;

  double log_det = 0.0;
  for (int k = 0; k < n; ++k) {
    const int top = ereach(k, s.cp, s.ci, parent, stack, mark);
    x[k] = 0.0;
    for (int p = s.cp[k]; p < s.cp[k + 1]; ++p) x[s.ci[p]] += values[s.csrc[p]];
    double d = x[k];
    x[k] = 0.0;
    for (int t = top; t < n; ++t) {
      const int j = stack[t];
      const double lkj = x[j] / f.lx_[s.lp[j]];
      x[j] = 0.0;
      for (int p = s.lp[j] + 1; p < next[j]; ++p) x[s.li[p]] -= f.lx_[p] * lkj;
      d -= lkj * lkj;
      f.lx_[next[j]++] = lkj;
    }
    if (!(d > 0.0) || !std::isfinite(d)) throw NotPositiveDefiniteError(s.perm[k]);
    const double lkk = std::sqrt(d);
    f.lx_[s.lp[k]] = lkk;
    next[k] = s.lp[k] + 1;
    log_det += 2.0 * std::log(lkk);
  }
  f.log_det_ = log_det;
  return f;
}

void CholeskyFactor::forward(Eigen::VectorXd& x) const {
  const auto& lp = symbolic_.col_ptr();
  const auto& li = symbolic_.row_idx();
  const int n = size();
  for (int j = 0; j < n; ++j) {
    x[j] /= lx_[lp[j]];
    const double xj = x[j];
    if (xj == 0.0) continue;
    for (int p = lp[j] + 1; p < lp[j + 1]; ++p) x[li[p]] -= lx_[p] * xj;
  }
}

void CholeskyFactor::backward(Eigen::VectorXd& x) const {
  const auto& lp = symbolic_.col_ptr();
  const auto& li = symbolic_.row_idx();
  for (int j = size() - 1; j >= 0; --j) {
    double sum = x[j];
    for (int p = lp[j] + 1; p < lp[j + 1]; ++p) sum -= lx_[p] * x[li[p]];
    x[j] = sum / lx_[lp[j]];
  }
}

Eigen::VectorXd CholeskyFactor::solve(const Eigen::VectorXd& b) const {
  if (b.size() != size()) throw DimensionError("right-hand side length does not match matrix");
  const auto& perm = symbolic_.perm();
  Eigen::VectorXd x(size());
  for (int k = 0; k < size(); ++k) x[k] = b[perm[k]];
  forward(x);
  backward(x);
  Eigen::VectorXd out(size());
  for (int k = 0; k < size(); ++k) out[perm[k]] = x[k];
  return out;
}

Eigen::MatrixXd CholeskyFactor::solve_many(const Eigen::MatrixXd& b) const {
  if (b.rows() != size()) throw DimensionError("right-hand side rows do not match matrix");
  Eigen::MatrixXd out(b.rows(), b.cols());
  for (Eigen::Index c = 0; c < b.cols(); ++c) out.col(c) = solve(b.col(c));
  return out;
}

Eigen::VectorXd CholeskyFactor::sample(const Eigen::VectorXd& z) const {
  if (z.size() != size()) throw DimensionError("noise vector length does not match matrix");
  Eigen::VectorXd x = z;
  backward(x);
  const auto& perm = symbolic_.perm();
  Eigen::VectorXd out(size());
  for (int k = 0; k < size(); ++k) out[perm[k]] = x[k];
  return out;
}

Eigen::MatrixXd CholeskyFactor::reconstruct_dense() const {
  const int n = size();
  const auto& lp = symbolic_.col_ptr();
  const auto& li = symbolic_.row_idx();
  const auto& perm = symbolic_.perm();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    for (int p = lp[j]; p < lp[j + 1]; ++p) l(li[p], j) = lx_[p];
  }
  const Eigen::MatrixXd llt = l * l.transpose();
  Eigen::MatrixXd out(n, n);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) out(perm[a], perm[b]) = llt(a, b);
  }
  return out;
}

PartialInverse::PartialInverse(const CholeskyFactor& factor)
    : symbolic_(factor.symbolic()), sx_(factor.values().size(), 0.0) {
  const int n = symbolic_.size();
  const auto& lp = symbolic_.col_ptr();
  const auto& li = symbolic_.row_idx();
  const auto& lx = factor.values();
  std::vector<int> where(n, -1);
  std::vector<double> acc;

  for (int i = n - 1; i >= 0; --i) {
    const int begin = lp[i] + 1;
    const int end = lp[i + 1];
    const double lii = lx[lp[i]];
    for (int p = begin; p < end; ++p) where[li[p]] = p;
    acc.assign(end - begin, 0.0);

    // acc[k] = sum_{j in J} S(k, j) L(j, i) for every k in J.
    for (int pj = begin; pj < end; ++pj) {
      const int j = li[pj];
      const double lji = lx[pj];
      acc[pj - begin] += sx_[lp[j]] * lji;
      for (int q = lp[j] + 1; q < lp[j + 1]; ++q) {
        const int r = li[q];
        const int pr = where[r];
        if (pr < 0) continue;
        const double srj = sx_[q];
        acc[pr - begin] += srj * lji;
        acc[pj - begin] += srj * lx[pr];
      }
    }

    double diag = 1.0 / (lii * lii);
    for (int p = begin; p < end; ++p) {
      sx_[p] = -acc[p - begin] / lii;
      diag -= lx[p] * sx_[p] / lii;
    }
    sx_[lp[i]] = diag;
    for (int p = begin; p < end; ++p) where[li[p]] = -1;
  }
}

std::optional<double> PartialInverse::find(int row, int col) const {
  const auto& pinv = symbolic_.inverse_perm();
  const auto& lp = symbolic_.col_ptr();
  const auto& li = symbolic_.row_idx();
  int r = pinv[row];
  int c = pinv[col];
  if (r < c) std::swap(r, c);
  const auto begin = li.begin() + lp[c];
  const auto end = li.begin() + lp[c + 1];
  const auto it = std::lower_bound(begin, end, r);
  if (it == end || *it != r) return std::nullopt;
  return sx_[static_cast<std::size_t>(it - li.begin())];
}

double PartialInverse::operator()(int row, int col) const {
  const auto v = find(row, col);
  if (!v) {
    throw InvalidArgumentError("entry (" + std::to_string(row) + ", " + std::to_string(col) +
                               ") is not on the factor pattern");
  }
  return *v;
}

Eigen::VectorXd PartialInverse::diagonal() const {
  const int n = size();
  const auto& perm = symbolic_.perm();
  const auto& lp = symbolic_.col_ptr();
  Eigen::VectorXd d(n);
  for (int k = 0; k < n; ++k) d[perm[k]] = sx_[lp[k]];
  return d;
}

double PartialInverse::trace_product(const SparseMatrix& b) const {
  if (b.rows() != size() || b.cols() != size()) {
    throw DimensionError("trace operand has the wrong size");
  }
  double sum = 0.0;
  for (int col = 0; col < b.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(b, col); it; ++it) {
      if (it.value() == 0.0) continue;
      sum += it.value() * (*this)(static_cast<int>(it.row()), col);
    }
  }
  return sum;
}

SparseMatrix symmetric_from_lower(int n, const std::vector<Eigen::Triplet<double>>& lower) {
  SparseMatrix low(n, n);
  low.setFromTriplets(lower.begin(), lower.end());
  SparseMatrix full = low.selfadjointView<Eigen::Lower>();
  full.makeCompressed();
  return full;
}

}  // namespace spdegrf

#include "spdegrf/spde.hpp"

#include <algorithm>
#include <cmath>

#include "spdegrf/errors.hpp"

namespace spdegrf {

namespace {

enum class Term { Kappa2, EastH11, EastH12, NorthH22, NorthH12 };

// Enumerates every term of the finite-volume operator as
// sink(row, col, weight, term, location): A(row, col) += weight * coef[term][location].
//
// Flux through the east edge of (i, j):
//   F = hy [H11 (u(i,j+1) - u(i,j)) / hx + H12 (u_north - u_south) / (2 hy)]
// with u_north/u_south averages of the two cells diagonally across the edge;
// (Au)(i,j) = kappa^2 u(i,j) - (1/V) sum of outward fluxes. Boundary edges
// carry no flux, and tangential neighbours outside the grid reuse the
// nearest cell inside.
template <class Sink>
void for_each_term(const Grid& grid, Sink&& sink) {
  const int nx = grid.nx();
  const int ny = grid.ny();
  const double v = grid.cell_area();
  const double east_normal = grid.hy() / (grid.hx() * v);
  const double north_normal = grid.hx() / (grid.hy() * v);
  const double tangential = 1.0 / (4.0 * v);

  for (int c = 0; c < grid.size(); ++c) sink(c, c, 1.0, Term::Kappa2, c);

  for (int j = 0; j + 1 < nx; ++j) {
    for (int i = 0; i < ny; ++i) {
      const int e = j * ny + i;
      const int left = grid.flat(i, j);
      const int right = grid.flat(i, j + 1);
      const int up = std::min(i + 1, ny - 1);
      const int down = std::max(i - 1, 0);
      const int tangent_cells[4] = {grid.flat(up, j), grid.flat(up, j + 1), grid.flat(down, j),
                                    grid.flat(down, j + 1)};
      for (int side = 0; side < 2; ++side) {
        const int row = side == 0 ? left : right;
        const double sign = side == 0 ? -1.0 : 1.0;  // -F/V on the left, +F/V on the right
        sink(row, right, sign * east_normal, Term::EastH11, e);
        sink(row, left, -sign * east_normal, Term::EastH11, e);
        sink(row, tangent_cells[0], sign * tangential, Term::EastH12, e);
        sink(row, tangent_cells[1], sign * tangential, Term::EastH12, e);
        sink(row, tangent_cells[2], -sign * tangential, Term::EastH12, e);
        sink(row, tangent_cells[3], -sign * tangential, Term::EastH12, e);
      }
    }
  }

  for (int j = 0; j < nx; ++j) {
    for (int i = 0; i + 1 < ny; ++i) {
      const int e = j * (ny - 1) + i;
      const int bottom = grid.flat(i, j);
      const int top = grid.flat(i + 1, j);
      const int east = std::min(j + 1, nx - 1);
      const int west = std::max(j - 1, 0);
      const int tangent_cells[4] = {grid.flat(i, east), grid.flat(i + 1, east), grid.flat(i, west),
                                    grid.flat(i + 1, west)};
      for (int side = 0; side < 2; ++side) {
        const int row = side == 0 ? bottom : top;
        const double sign = side == 0 ? -1.0 : 1.0;
        sink(row, top, sign * north_normal, Term::NorthH22, e);
        sink(row, bottom, -sign * north_normal, Term::NorthH22, e);
        sink(row, tangent_cells[0], sign * tangential, Term::NorthH12, e);
        sink(row, tangent_cells[1], sign * tangential, Term::NorthH12, e);
        sink(row, tangent_cells[2], -sign * tangential, Term::NorthH12, e);
        sink(row, tangent_cells[3], -sign * tangential, Term::NorthH12, e);
      }
    }
  }
}

const Eigen::VectorXd& coefficient_of(const StencilCoefficients& c, Term term) {
  switch (term) {
    case Term::Kappa2:
      return c.kappa2;
    case Term::EastH11:
      return c.east_h11;
    case Term::EastH12:
      return c.east_h12;
    case Term::NorthH22:
      return c.north_h22;
    default:
      return c.north_h12;
  }
}

Eigen::VectorXd& coefficient_of(StencilCoefficients& c, Term term) {
  return const_cast<Eigen::VectorXd&>(
      coefficient_of(static_cast<const StencilCoefficients&>(c), term));
}

StencilCoefficients zero_coefficients(const Grid& grid) {
  const int east = grid.ny() * (grid.nx() - 1);
  const int north = (grid.ny() - 1) * grid.nx();
  return {Eigen::VectorXd::Zero(grid.size()), Eigen::VectorXd::Zero(east),
          Eigen::VectorXd::Zero(east), Eigen::VectorXd::Zero(north),
          Eigen::VectorXd::Zero(north)};
}

void check_sizes(const StencilCoefficients& c, const Grid& grid) {
  const int east = grid.ny() * (grid.nx() - 1);
  const int north = (grid.ny() - 1) * grid.nx();
  if (c.kappa2.size() != grid.size() || c.east_h11.size() != east || c.east_h12.size() != east ||
      c.north_h22.size() != north || c.north_h12.size() != north) {
    throw DimensionError("stencil coefficients do not match the grid");
  }
}

// Lower triangle of V * (B^T C + C^T B) for B, C with identical row patterns
// (symmetrized product; B == C gives 2 A^T A V, hence the caller's scale).
std::vector<Eigen::Triplet<double>> gram_lower(const RowSparseMatrix& b,
                                               const RowSparseMatrix& c, double scale) {
  std::vector<Eigen::Triplet<double>> out;
  out.reserve(static_cast<std::size_t>(b.nonZeros()) * 5);
  const int* outer = b.outerIndexPtr();
  const int* inner = b.innerIndexPtr();
  const double* bv = b.valuePtr();
  const double* cv = c.valuePtr();
  for (int k = 0; k < b.rows(); ++k) {
    for (int p = outer[k]; p < outer[k + 1]; ++p) {
      for (int q = outer[k]; q <= p; ++q) {
        // inner indices are sorted, so inner[p] >= inner[q]
        out.emplace_back(inner[p], inner[q], scale * (bv[p] * cv[q] + cv[p] * bv[q]));
      }
    }
  }
  return out;
}

}  // namespace

Eigen::VectorXd NonStatParams::to_vector() const {
  const int n = coefficients();
  Eigen::VectorXd theta(size());
  for (int f = 0; f < kFieldCount; ++f) {
    if (alpha[f].size() != n) throw DimensionError("alpha blocks have unequal lengths");
    theta.segment(f * n, n) = alpha[f];
  }
  theta.tail(regions()) = log_tau_noise;
  return theta;
}

NonStatParams NonStatParams::from_vector(const Eigen::VectorXd& theta, int coefficients,
                                         int regions) {
  if (theta.size() != kFieldCount * coefficients + regions) {
    throw DimensionError("theta has length " + std::to_string(theta.size()) + ", expected " +
                         std::to_string(kFieldCount * coefficients + regions));
  }
  NonStatParams p;
  for (int f = 0; f < kFieldCount; ++f) p.alpha[f] = theta.segment(f * coefficients, coefficients);
  p.log_tau_noise = theta.tail(regions);
  return p;
}

NonStatParams NonStatParams::constant(int coefficients, double log_kappa2, double log_gamma,
                                      double vx, double vy,
                                      const std::vector<double>& log_tau_noise) {
  NonStatParams p;
  const double values[kFieldCount] = {log_kappa2, log_gamma, vx, vy};
  for (int f = 0; f < kFieldCount; ++f) p.alpha[f] = Eigen::VectorXd::Constant(coefficients, values[f]);
  p.log_tau_noise = Eigen::Map<const Eigen::VectorXd>(log_tau_noise.data(),
                                                      static_cast<Eigen::Index>(log_tau_noise.size()));
  return p;
}

GridAxes grid_axes(const Grid& grid) {
  GridAxes axes;
  for (int j = 0; j < grid.nx(); ++j) axes.center_x.push_back(grid.x_min() + (j + 0.5) * grid.hx());
  for (int i = 0; i < grid.ny(); ++i) axes.center_y.push_back(grid.y_min() + (i + 0.5) * grid.hy());
  for (int j = 1; j < grid.nx(); ++j) axes.line_x.push_back(grid.x_min() + j * grid.hx());
  for (int i = 1; i < grid.ny(); ++i) axes.line_y.push_back(grid.y_min() + i * grid.hy());
  return axes;
}

SpdeFields eval_spde_fields(const NonStatParams& params, const Basis2D& basis, const Grid& grid) {
  if (!basis.covers(grid)) throw InvalidArgumentError("basis domain does not cover the grid");
  if (params.coefficients() != basis.size()) {
    throw DimensionError("parameter blocks have " + std::to_string(params.coefficients()) +
                         " coefficients, basis has " + std::to_string(basis.size()));
  }
  const GridAxes axes = grid_axes(grid);
  auto flat = [](const Eigen::MatrixXd& m) {
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()));
  };
  SpdeFields f;
  f.kappa2 = flat(basis.eval_tensor(params.alpha[kLogKappa2], axes.center_x, axes.center_y))
                 .array()
                 .exp();
  f.east_gamma = flat(basis.eval_tensor(params.alpha[kLogGamma], axes.line_x, axes.center_y))
                     .array()
                     .exp();
  f.east_vx = flat(basis.eval_tensor(params.alpha[kVx], axes.line_x, axes.center_y));
  f.east_vy = flat(basis.eval_tensor(params.alpha[kVy], axes.line_x, axes.center_y));
  f.north_gamma = flat(basis.eval_tensor(params.alpha[kLogGamma], axes.center_x, axes.line_y))
                      .array()
                      .exp();
  f.north_vx = flat(basis.eval_tensor(params.alpha[kVx], axes.center_x, axes.line_y));
  f.north_vy = flat(basis.eval_tensor(params.alpha[kVy], axes.center_x, axes.line_y));
  return f;
}

StencilCoefficients stencil_coefficients(const SpdeFields& f) {
  StencilCoefficients c;
  c.kappa2 = f.kappa2;
  c.east_h11 = f.east_gamma.array() + f.east_vx.array().square();
  c.east_h12 = f.east_vx.array() * f.east_vy.array();
  c.north_h22 = f.north_gamma.array() + f.north_vy.array().square();
  c.north_h12 = f.north_vx.array() * f.north_vy.array();
  return c;
}

SpdeOperator assemble_A(const StencilCoefficients& coefficients, const Grid& grid) {
  check_sizes(coefficients, grid);
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(grid.size()) * 25);
  for_each_term(grid, [&](int row, int col, double weight, Term term, int loc) {
    entries.emplace_back(row, col, weight * coefficient_of(coefficients, term)[loc]);
  });
  SpdeOperator op;
  op.cell_area = grid.cell_area();
  op.a.resize(grid.size(), grid.size());
  op.a.setFromTriplets(entries.begin(), entries.end());
  op.a.makeCompressed();
  return op;
}

SpdeOperator assemble_A(const SpdeFields& fields, const Grid& grid) {
  return assemble_A(stencil_coefficients(fields), grid);
}

SparseMatrix assemble_Q(const SpdeOperator& op) {
  return symmetric_from_lower(static_cast<int>(op.a.rows()),
                              gram_lower(op.a, op.a, 0.5 * op.cell_area));
}

SparseMatrix precision_matrix(const NonStatParams& params, const Basis2D& basis, const Grid& grid) {
  return assemble_Q(assemble_A(eval_spde_fields(params, basis, grid), grid));
}

SparseMatrix assemble_dQ(const NonStatParams& params, const Basis2D& basis, const Grid& grid,
                         int which) {
  const int ncoef = params.coefficients();
  if (which < 0 || which >= params.size()) {
    throw InvalidArgumentError("parameter index " + std::to_string(which) + " out of range");
  }
  const SpdeFields fields = eval_spde_fields(params, basis, grid);
  const SpdeOperator op = assemble_A(fields, grid);

  StencilCoefficients d = zero_coefficients(grid);
  if (which < kFieldCount * ncoef) {
    const int field = which / ncoef;
    Eigen::VectorXd unit = Eigen::VectorXd::Zero(ncoef);
    unit[which % ncoef] = 1.0;
    const GridAxes axes = grid_axes(grid);
    auto flat = [](const Eigen::MatrixXd& m) {
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()));
    };
    const Eigen::ArrayXd fc = flat(basis.eval_tensor(unit, axes.center_x, axes.center_y));
    const Eigen::ArrayXd fe = flat(basis.eval_tensor(unit, axes.line_x, axes.center_y));
    const Eigen::ArrayXd fn = flat(basis.eval_tensor(unit, axes.center_x, axes.line_y));
    switch (field) {
      case kLogKappa2:
        d.kappa2 = fields.kappa2.array() * fc;
        break;
      case kLogGamma:
        d.east_h11 = fields.east_gamma.array() * fe;
        d.north_h22 = fields.north_gamma.array() * fn;
        break;
      case kVx:
        d.east_h11 = 2.0 * fields.east_vx.array() * fe;
        d.east_h12 = fields.east_vy.array() * fe;
        d.north_h12 = fields.north_vy.array() * fn;
        break;
      default:
        d.east_h12 = fields.east_vx.array() * fe;
        d.north_h12 = fields.north_vx.array() * fn;
        d.north_h22 = 2.0 * fields.north_vy.array() * fn;
        break;
    }
  }
  const SpdeOperator dop = assemble_A(d, grid);
  return symmetric_from_lower(grid.size(), gram_lower(op.a, dop.a, op.cell_area));
}

StencilCoefficients stencil_sensitivity(const SpdeOperator& op, const SparseMatrix& m,
                                        const Grid& grid) {
  const RowSparseMatrix& a = op.a;
  // Z = A M restricted to A's pattern.
  RowSparseMatrix z = a;
  const int* outer = a.outerIndexPtr();
  const int* inner = a.innerIndexPtr();
  const double* av = a.valuePtr();
  double* zv = z.valuePtr();
  auto m_at = [&m](int row, int col) {
    const int* begin = m.innerIndexPtr() + m.outerIndexPtr()[col];
    const int* end = m.innerIndexPtr() + m.outerIndexPtr()[col + 1];
    const int* it = std::lower_bound(begin, end, row);
    if (it == end || *it != row) {
      throw InvalidArgumentError("sensitivity weight matrix lacks an entry on Q's pattern");
    }
    return m.valuePtr()[it - m.innerIndexPtr()];
  };
  for (int k = 0; k < a.rows(); ++k) {
    for (int p = outer[k]; p < outer[k + 1]; ++p) {
      double sum = 0.0;
      for (int q = outer[k]; q < outer[k + 1]; ++q) sum += av[q] * m_at(inner[q], inner[p]);
      zv[p] = sum;
    }
  }

  StencilCoefficients sens = zero_coefficients(grid);
  const double v = op.cell_area;
  for_each_term(grid, [&](int row, int col, double weight, Term term, int loc) {
    const int* begin = inner + outer[row];
    const int* end = inner + outer[row + 1];
    const int* it = std::lower_bound(begin, end, col);
    coefficient_of(sens, term)[loc] += v * weight * zv[it - inner];
  });
  return sens;
}

Eigen::VectorXd alpha_gradient(const StencilCoefficients& s, const SpdeFields& f,
                               const Basis2D& basis, const Grid& grid) {
  const GridAxes axes = grid_axes(grid);
  const int ny = grid.ny();
  const int nx = grid.nx();
  auto as_matrix = [](const Eigen::VectorXd& v, int rows, int cols) {
    return Eigen::MatrixXd(Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, cols));
  };
  auto east = [&](const Eigen::VectorXd& w) {
    return basis.contract_tensor(as_matrix(w, ny, nx - 1), axes.line_x, axes.center_y);
  };
  auto north = [&](const Eigen::VectorXd& w) {
    return basis.contract_tensor(as_matrix(w, ny - 1, nx), axes.center_x, axes.line_y);
  };
  const int n = basis.size();
  Eigen::VectorXd g(kFieldCount * n);

  const Eigen::VectorXd wk = s.kappa2.array() * f.kappa2.array();
  g.segment(kLogKappa2 * n, n) =
      basis.contract_tensor(as_matrix(wk, ny, nx), axes.center_x, axes.center_y);

  g.segment(kLogGamma * n, n) =
      east(s.east_h11.cwiseProduct(f.east_gamma)) + north(s.north_h22.cwiseProduct(f.north_gamma));

  g.segment(kVx * n, n) =
      east(2.0 * s.east_h11.cwiseProduct(f.east_vx) + s.east_h12.cwiseProduct(f.east_vy)) +
      north(s.north_h12.cwiseProduct(f.north_vy));

  g.segment(kVy * n, n) =
      east(s.east_h12.cwiseProduct(f.east_vx)) +
      north(2.0 * s.north_h22.cwiseProduct(f.north_vy) + s.north_h12.cwiseProduct(f.north_vx));
  return g;
}

}  // namespace spdegrf

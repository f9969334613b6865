#pragma once

#include <array>
#include <span>
#include <utility>

#include <Eigen/SparseCore>

namespace spdegrf {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct CellIndex {
  int flat = 0;
  friend bool operator==(CellIndex, CellIndex) = default;
};

/// Regular nx-by-ny grid over the rectangle [x_min, x_max] x [y_min, y_max].
///
/// Cell (i, j) has y-index i and x-index j. Cells are stacked column-wise with
/// the y-index running fastest, so flat = j * ny + i. Every Kronecker/tensor
/// layout elsewhere in the library assumes this order.
class Grid {
 public:
  Grid(double x_min, double x_max, double y_min, double y_max, int nx, int ny);

  double x_min() const { return x_min_; }
  double x_max() const { return x_max_; }
  double y_min() const { return y_min_; }
  double y_max() const { return y_max_; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int size() const { return nx_ * ny_; }
  double hx() const { return hx_; }
  double hy() const { return hy_; }
  double cell_area() const { return hx_ * hy_; }

  int flat(int i, int j) const { return j * ny_ + i; }
  std::pair<int, int> ij(int flat) const { return {flat % ny_, flat / ny_}; }

  Point center(int i, int j) const;
  Point center(CellIndex c) const;

  bool contains(Point p) const;
  CellIndex locate(Point p) const;

 private:
  double x_min_, x_max_, y_min_, y_max_;
  int nx_, ny_;
  double hx_, hy_;
};

Grid build_grid(const std::array<double, 4>& extents, int nx, int ny);

CellIndex locate_cell(const Grid& grid, Point p);

/// N x (nx*ny) 0/1 matrix with one unit entry per row at the containing cell.
Eigen::SparseMatrix<double> selection_matrix(const Grid& grid,
                                             std::span<const Point> locations);

}  // namespace spdegrf

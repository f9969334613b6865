#include "spdegrf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "spdegrf/errors.hpp"

namespace spdegrf {

namespace {

std::string point_message(double x, double y) {
  std::ostringstream os;
  os.precision(17);
  os << "point (" << x << ", " << y << ") lies outside the domain";
  return os.str();
}

}  // namespace

OutOfDomainError::OutOfDomainError(double x, double y)
    : Error(point_message(x, y)), x_(x), y_(y) {}

NotPositiveDefiniteError::NotPositiveDefiniteError(long pivot)
    : Error("matrix is not positive definite (non-positive pivot at row " +
            std::to_string(pivot) + ")"),
      pivot_(pivot) {}

Grid::Grid(double x_min, double x_max, double y_min, double y_max, int nx,
           int ny)
    : x_min_(x_min), x_max_(x_max), y_min_(y_min), y_max_(y_max), nx_(nx),
      ny_(ny) {
  if (!(std::isfinite(x_min) && std::isfinite(x_max) && std::isfinite(y_min) &&
        std::isfinite(y_max))) {
    throw InvalidGridError("grid extents must be finite");
  }
  if (!(x_max > x_min) || !(y_max > y_min)) {
    throw InvalidGridError("grid extents must satisfy x_max > x_min and y_max > y_min");
  }
  if (nx < 3 || ny < 3) {
    throw InvalidGridError("grid needs at least 3 cells along each axis, got " +
                           std::to_string(nx) + " x " + std::to_string(ny));
  }
  hx_ = (x_max - x_min) / nx;
  hy_ = (y_max - y_min) / ny;
}

Point Grid::center(int i, int j) const {
  return {x_min_ + (j + 0.5) * hx_, y_min_ + (i + 0.5) * hy_};
}

Point Grid::center(CellIndex c) const {
  auto [i, j] = ij(c.flat);
  return center(i, j);
}

bool Grid::contains(Point p) const {
  return p.x >= x_min_ && p.x <= x_max_ && p.y >= y_min_ && p.y <= y_max_;
}

CellIndex Grid::locate(Point p) const {
  if (!contains(p)) throw OutOfDomainError(p.x, p.y);
  // Points on a shared edge go to the larger index; the max edge maps inward.
  int j = static_cast<int>(std::floor((p.x - x_min_) / hx_));
  int i = static_cast<int>(std::floor((p.y - y_min_) / hy_));
  j = std::clamp(j, 0, nx_ - 1);
  i = std::clamp(i, 0, ny_ - 1);
  return {flat(i, j)};
}

Grid build_grid(const std::array<double, 4>& extents, int nx, int ny) {
  return Grid(extents[0], extents[1], extents[2], extents[3], nx, ny);
}

CellIndex locate_cell(const Grid& grid, Point p) { return grid.locate(p); }

Eigen::SparseMatrix<double> selection_matrix(const Grid& grid,
                                             std::span<const Point> locations) {
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(locations.size());
  for (std::size_t r = 0; r < locations.size(); ++r) {
    entries.emplace_back(static_cast<int>(r), grid.locate(locations[r]).flat, 1.0);
  }
  Eigen::SparseMatrix<double> e(static_cast<int>(locations.size()), grid.size());
  e.setFromTriplets(entries.begin(), entries.end());
  return e;
}

}  // namespace spdegrf

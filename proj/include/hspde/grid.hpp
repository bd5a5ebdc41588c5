#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace hspde {

/// Thrown when two objects that must live on the same grid do not.
struct GridMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

using Point = std::array<double, 2>;

/// Uniform grid on D = (0,1)^d, d in {1,2}, homogeneous Dirichlet boundary.
///
/// Only interior nodes carry unknowns; boundary values are zero by convention
/// and every operator treats them as ghost zeros. Interior node (i,j) with
/// 1 <= i,j <= n_interior sits at (i*h, j*h) with h = 1/(n_interior+1).
class Grid {
 public:
  Grid() = default;
  Grid(int dimension, int n_interior) : dimension_(dimension), n_interior_(n_interior) {
    if (dimension != 1 && dimension != 2) {
      throw std::invalid_argument("grid.dimension must be 1 or 2, got " + std::to_string(dimension));
    }
    if (n_interior < 1) {
      throw std::invalid_argument("grid.n_interior must be positive, got " + std::to_string(n_interior));
    }
  }

  [[nodiscard]] int dimension() const { return dimension_; }
  [[nodiscard]] int n_interior() const { return n_interior_; }
  [[nodiscard]] double h() const { return 1.0 / (n_interior_ + 1); }
  [[nodiscard]] std::size_t size() const {
    return dimension_ == 1 ? static_cast<std::size_t>(n_interior_)
                           : static_cast<std::size_t>(n_interior_) * n_interior_;
  }
  /// Quadrature weight of one node (midpoint rule), h^d.
  [[nodiscard]] double cell_volume() const { return dimension_ == 1 ? h() : h() * h(); }
  /// |D| = 1 for the unit cube.
  [[nodiscard]] static constexpr double domain_measure() { return 1.0; }

  /// Linear index of interior node (i, j), 1-based per axis; j ignored in 1D.
  [[nodiscard]] std::size_t index(int i, int j = 1) const {
    return dimension_ == 1 ? static_cast<std::size_t>(i - 1)
                           : static_cast<std::size_t>(j - 1) * n_interior_ + (i - 1);
  }
  /// Whether (i, j) is an interior node; boundary and exterior indices are ghosts.
  [[nodiscard]] bool interior(int i, int j = 1) const {
    const bool ok_i = i >= 1 && i <= n_interior_;
    return dimension_ == 1 ? ok_i : ok_i && j >= 1 && j <= n_interior_;
  }
  [[nodiscard]] Point coords(std::size_t k) const {
    if (dimension_ == 1) return {(static_cast<double>(k) + 1) * h(), 0.0};
    const auto i = k % n_interior_;
    const auto j = k / n_interior_;
    return {(static_cast<double>(i) + 1) * h(), (static_cast<double>(j) + 1) * h()};
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int dimension_ = 1;
  int n_interior_ = 1;
};

/// Real-valued function on the interior nodes of a grid.
struct GridFunction {
  Grid grid;
  Eigen::VectorXd values;

  GridFunction() = default;
  explicit GridFunction(const Grid& g) : grid(g), values(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.size()))) {}
  GridFunction(const Grid& g, Eigen::VectorXd v) : grid(g), values(std::move(v)) {
    if (static_cast<std::size_t>(values.size()) != grid.size()) {
      throw GridMismatch("grid function has " + std::to_string(values.size()) + " values, grid has " +
                         std::to_string(grid.size()) + " nodes");
    }
  }

  template <class F>
  static GridFunction from_function(const Grid& g, F&& f) {
    GridFunction u(g);
    for (std::size_t k = 0; k < g.size(); ++k) u.values[static_cast<Eigen::Index>(k)] = f(g.coords(k));
    return u;
  }

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  [[nodiscard]] bool all_finite() const { return values.allFinite(); }

  GridFunction& operator+=(const GridFunction& o) {
    require_same_grid(grid, o.grid);
    values += o.values;
    return *this;
  }
  GridFunction& operator-=(const GridFunction& o) {
    require_same_grid(grid, o.grid);
    values -= o.values;
    return *this;
  }
  GridFunction& operator*=(double c) {
    values *= c;
    return *this;
  }
  friend GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
  friend GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
  friend GridFunction operator*(double c, GridFunction a) { return a *= c; }

  static void require_same_grid(const Grid& a, const Grid& b) {
    if (!(a == b)) {
      throw GridMismatch("grid mismatch: (" + std::to_string(a.dimension()) + "d, N=" +
                         std::to_string(a.n_interior()) + ") vs (" + std::to_string(b.dimension()) +
                         "d, N=" + std::to_string(b.n_interior()) + ")");
    }
  }
};

/// Discrete L2 pairing with the midpoint weights h^d.
inline double inner(const GridFunction& u, const GridFunction& v) {
  GridFunction::require_same_grid(u.grid, v.grid);
  return u.grid.cell_volume() * u.values.dot(v.values);
}

}  // namespace hspde

#pragma once

// Multiplicative noise B(t,v) phi (x) = sigma(t, v(x)) * int_D k(x,y) phi(y) dy on the
// grid (midpoint quadrature), and truncated Q-Wiener increments in the sine basis.

#include "hspde/grid.hpp"
#include "hspde/holder_reg.hpp"
#include "hspde/rng.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hspde {

/// Grid-sampled symmetric kernel, entry (i,j) = k(x_i, y_j).
struct Kernel {
  Grid grid;
  Eigen::MatrixXd values;
  double c_k = 0.0;          // max_i ||k(x_i, .)||_2^2
  double l2_norm_sq = 0.0;   // ||k||^2 in L2(D x D)
  Eigen::VectorXd row_norm_sq;  // ||k(x_i, .)||_2^2 per node
};

inline Kernel make_kernel(const Grid& grid, Eigen::MatrixXd values, double symmetry_tol = 1e-12) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  if (values.rows() != n || values.cols() != n) throw GridMismatch("kernel matrix does not match grid size");
  if (!values.allFinite()) throw std::invalid_argument("kernel has non-finite entries");
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  if ((values - values.transpose()).cwiseAbs().maxCoeff() > symmetry_tol * scale) {
    throw std::invalid_argument("kernel is not symmetric");
  }
  Kernel k;
  k.grid = grid;
  const double w = grid.cell_volume();
  k.row_norm_sq = w * values.rowwise().squaredNorm();
  k.c_k = k.row_norm_sq.size() > 0 ? k.row_norm_sq.maxCoeff() : 0.0;
  k.l2_norm_sq = w * k.row_norm_sq.sum();
  k.values = std::move(values);
  return k;
}

inline Kernel kernel_from_function(const Grid& grid, const std::function<double(const Point&, const Point&)>& k) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      m(i, j) = m(j, i) = k(grid.coords(static_cast<std::size_t>(i)), grid.coords(static_cast<std::size_t>(j)));
    }
  }
  return make_kernel(grid, std::move(m));
}

/// k(x,y) = amplitude * exp(-|x-y|^2 / (2 length^2)).
inline Kernel gaussian_kernel(const Grid& grid, double length, double amplitude = 1.0) {
  if (!(length > 0.0)) throw std::invalid_argument("kernel.length must be positive");
  return kernel_from_function(grid, [=](const Point& x, const Point& y) {
    const double dx = x[0] - y[0];
    const double dy = x[1] - y[1];
    return amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * length * length));
  });
}

/// Rank-one kernel k(x,y) = phi(x) phi(y).
inline Kernel rank_one_kernel(const GridFunction& phi) {
  return make_kernel(phi.grid, phi.values * phi.values.transpose());
}

inline Kernel constant_kernel(const Grid& grid, double c) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  return make_kernel(grid, Eigen::MatrixXd::Constant(n, n, c));
}

/// Kernel CSV: a header line "n_interior=<N>,dimension=<d>", then one matrix row per line.
inline void save_kernel_csv(const Kernel& k, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write kernel file " + path);
  out << "n_interior=" << k.grid.n_interior() << ",dimension=" << k.grid.dimension() << '\n';
  out.precision(17);
  for (Eigen::Index i = 0; i < k.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < k.values.cols(); ++j) out << (j ? "," : "") << k.values(i, j);
    out << '\n';
  }
}

inline Kernel load_kernel_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read kernel file " + path);
  std::string header;
  std::getline(in, header);
  int n_interior = 0, dimension = 1;
  if (std::sscanf(header.c_str(), "n_interior=%d,dimension=%d", &n_interior, &dimension) < 1) {
    throw std::runtime_error("kernel file " + path + ": bad header '" + header + "'");
  }
  const Grid grid(dimension, n_interior);
  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd m(n, n);
  std::string line;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("kernel file " + path + ": too few rows");
    std::stringstream ss(line);
    std::string cell;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!std::getline(ss, cell, ',')) throw std::runtime_error("kernel file " + path + ": short row");
      m(i, j) = std::stod(cell);
    }
  }
  return make_kernel(grid, std::move(m));
}

/// B(t, v) = sigma(t, v(x)) K with its Hoelder modulus (alpha, L) for bound checks.
///
/// Built from a raw Hoelder coefficient or from its regularization; a regularized
/// operator is n-Lipschitz, so its modulus is (1, n).
class NoiseOperator {
 public:
  using SigmaFn = std::function<double(double, double)>;

  NoiseOperator() = default;
  NoiseOperator(SigmaFn sigma, Kernel kernel, double alpha, double l_alpha, double c_sigma, bool is_zero = false)
      : sigma_(std::move(sigma)), kernel_(std::move(kernel)), alpha_(alpha), l_alpha_(l_alpha), c_sigma_(c_sigma),
        zero_(is_zero) {}

  static NoiseOperator from_holder(const HolderSpec& s, Kernel kernel) {
    s.validate_constants();
    return {s.eval, std::move(kernel), s.alpha, s.l_alpha, s.c_sigma, s.name == "zero"};
  }

  /// Exact evaluation uses sigma_n_eval per point; tabulated uses a SigmaTable.
  static NoiseOperator from_regularized(const RegularizedSigma& reg, Kernel kernel, bool tabulated = false) {
    SigmaFn f;
    if (tabulated && reg.base.time_independent) {
      auto table = std::make_shared<const SigmaTable>(reg);
      f = [table](double t, double x) { return (*table)(t, x); };
    } else {
      f = [reg](double t, double x) { return sigma_n_eval(reg, t, x); };
    }
    const double ca = reg.base.alpha < 1.0 ? hspde::c_alpha(reg.base.alpha, reg.base.l_alpha) : 0.0;
    // Growth of sigma_n: sigma_n^2 <= 2 (C_alpha^2 + C_sigma (1 + lambda^2)).
    NoiseOperator op(std::move(f), std::move(kernel), 1.0, static_cast<double>(reg.n), reg.base.c_sigma,
                     reg.base.name == "zero");
    op.regularized_ = true;
    op.c_alpha_ = ca;
    return op;
  }

  double sigma(double t, double x) const { return sigma_(t, x); }
  [[nodiscard]] const Kernel& kernel() const { return kernel_; }
  [[nodiscard]] double alpha() const { return alpha_; }
  [[nodiscard]] double l_alpha() const { return l_alpha_; }
  [[nodiscard]] double c_sigma() const { return c_sigma_; }
  [[nodiscard]] double c_alpha() const { return c_alpha_; }
  [[nodiscard]] bool regularized() const { return regularized_; }
  [[nodiscard]] bool is_zero() const { return zero_ || kernel_.l2_norm_sq == 0.0; }

  /// sigma(t, v(x)) at every node.
  Eigen::VectorXd sigma_values(double t, const GridFunction& v) const {
    Eigen::VectorXd s(v.values.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = sigma_(t, v.values[i]);
    return s;
  }

  /// (K phi)(x_i) = h^d sum_j k_ij phi_j.
  Eigen::VectorXd integrate(const GridFunction& phi) const {
    GridFunction::require_same_grid(kernel_.grid, phi.grid);
    return kernel_.grid.cell_volume() * (kernel_.values * phi.values);
  }

 private:
  SigmaFn sigma_;
  Kernel kernel_;
  double alpha_ = 1.0;
  double l_alpha_ = 1.0;
  double c_sigma_ = 1.0;
  double c_alpha_ = 0.0;
  bool regularized_ = false;
  bool zero_ = false;
};

inline GridFunction apply_B(const NoiseOperator& op, double t, const GridFunction& v, const GridFunction& phi) {
  GridFunction::require_same_grid(v.grid, phi.grid);
  GridFunction::require_same_grid(v.grid, op.kernel().grid);
  return {v.grid, op.sigma_values(t, v).cwiseProduct(op.integrate(phi))};
}

/// ||B(t,v)||_HS^2 = int_D |sigma(t, v(x))|^2 ||k(x,.)||_2^2 dx.
inline double hs_norm_sq(const NoiseOperator& op, double t, const GridFunction& v) {
  GridFunction::require_same_grid(v.grid, op.kernel().grid);
  const Eigen::VectorXd s = op.sigma_values(t, v);
  return v.grid.cell_volume() * s.cwiseAbs2().dot(op.kernel().row_norm_sq);
}

/// L2_h-orthonormal discrete sine basis; column k is mode k, sorted by (j2, j1) in 2D.
/// Returns also the mode indices (j1, j2) of each column.
inline Eigen::MatrixXd sine_basis(const Grid& grid, std::vector<std::array<int, 2>>* modes = nullptr) {
  const int n = grid.n_interior();
  const auto size = static_cast<Eigen::Index>(grid.size());
  const double norm1 = std::sqrt(2.0);  // sqrt(2) sin(j pi x) has unit L2_h norm on the grid
  Eigen::MatrixXd e(size, size);
  if (modes) modes->clear();
  Eigen::Index col = 0;
  const int n2 = grid.dimension() == 1 ? 1 : n;
  for (int j2 = 1; j2 <= n2; ++j2) {
    for (int j1 = 1; j1 <= n; ++j1, ++col) {
      for (Eigen::Index k = 0; k < size; ++k) {
        const Point x = grid.coords(static_cast<std::size_t>(k));
        double v = norm1 * std::sin(j1 * std::numbers::pi * x[0]);
        if (grid.dimension() == 2) v *= norm1 * std::sin(j2 * std::numbers::pi * x[1]);
        e(k, col) = v;
      }
      if (modes) modes->push_back({j1, grid.dimension() == 2 ? j2 : 0});
    }
  }
  return e;
}

/// Parseval route: sum over a complete orthonormal basis of ||B(t,v) e_j||_2^2.
inline double hs_norm_sq_parseval_oracle(const NoiseOperator& op, double t, const GridFunction& v) {
  const Eigen::MatrixXd basis = sine_basis(v.grid);
  double total = 0.0;
  for (Eigen::Index j = 0; j < basis.cols(); ++j) {
    const GridFunction e(v.grid, basis.col(j));
    const GridFunction be = apply_B(op, t, v, e);
    total += inner(be, be);
  }
  return total;
}

struct HolderModulusReport {
  double lhs = 0.0;              // ||B(t,v) - B(t,w)||_HS^2
  double kernel_bound = 0.0;     // C_k L^2 ||v-w||_{2 alpha}^{2 alpha}
  double embedded_bound = 0.0;   // C_k L^2 |D|^{1-alpha} ||v-w||_2^{2 alpha}
  bool pass = true;
};

inline HolderModulusReport holder_modulus_check(const NoiseOperator& op, double t, const GridFunction& v,
                                                const GridFunction& w) {
  GridFunction::require_same_grid(v.grid, w.grid);
  GridFunction::require_same_grid(v.grid, op.kernel().grid);
  const double a = op.alpha();
  const double l = op.l_alpha();
  const double c_k = op.kernel().c_k;
  const double vol = v.grid.cell_volume();
  const Eigen::VectorXd ds = op.sigma_values(t, v) - op.sigma_values(t, w);
  const Eigen::VectorXd diff = (v.values - w.values).cwiseAbs();

  HolderModulusReport r;
  r.lhs = vol * ds.cwiseAbs2().dot(op.kernel().row_norm_sq);
  const double lp = vol * diff.array().pow(2.0 * a).sum();
  r.kernel_bound = c_k * l * l * lp;
  const double l2 = std::sqrt(vol * diff.squaredNorm());
  r.embedded_bound = c_k * l * l * std::pow(Grid::domain_measure(), 1.0 - a) * std::pow(l2, 2.0 * a);
  r.pass = within_bound(r.lhs, r.kernel_bound) && within_bound(r.kernel_bound, r.embedded_bound);
  return r;
}

inline nlohmann::json to_json(const HolderModulusReport& r) {
  return {{"lhs", r.lhs}, {"kernel_bound", r.kernel_bound}, {"embedded_bound", r.embedded_bound}, {"pass", r.pass}};
}

/// Truncated Karhunen-Loeve realization of Q-Wiener increments.
///
/// Q is diagonal in an L2_h-orthonormal basis; one sampler is owned by one path.
class QWienerSampler {
 public:
  QWienerSampler() = default;
  QWienerSampler(Grid grid, std::vector<double> eigenvalues, Eigen::MatrixXd eigenfunctions, CounterRng rng)
      : grid_(grid), eigenvalues_(std::move(eigenvalues)), eigenfunctions_(std::move(eigenfunctions)), rng_(rng) {
    if (eigenvalues_.empty()) throw std::invalid_argument("sampler needs at least one mode");
    if (static_cast<Eigen::Index>(eigenvalues_.size()) != eigenfunctions_.cols() ||
        eigenfunctions_.rows() != static_cast<Eigen::Index>(grid_.size())) {
      throw GridMismatch("sampler eigenfunctions do not match grid/modes");
    }
    for (double q : eigenvalues_) {
      if (!(q > 0.0) || !std::isfinite(q)) throw std::invalid_argument("Q eigenvalues must be positive and finite");
    }
    const Eigen::MatrixXd gram = grid_.cell_volume() * eigenfunctions_.transpose() * eigenfunctions_;
    const auto j = gram.rows();
    if ((gram - Eigen::MatrixXd::Identity(j, j)).cwiseAbs().maxCoeff() > 1e-10) {
      throw std::invalid_argument("Q eigenfunctions are not discretely orthonormal");
    }
    sqrt_q_.resize(static_cast<Eigen::Index>(eigenvalues_.size()));
    for (std::size_t k = 0; k < eigenvalues_.size(); ++k) sqrt_q_[static_cast<Eigen::Index>(k)] = std::sqrt(eigenvalues_[k]);
  }

  /// Default spectrum q_j = j^-2 (1D) or (j1 j2)^-2 (2D) on the sine basis.
  /// num_modes = 0 keeps all grid modes.
  static QWienerSampler sine(const Grid& grid, std::uint64_t seed, std::uint64_t path_index, int num_modes = 0) {
    std::vector<std::array<int, 2>> modes;
    Eigen::MatrixXd basis = sine_basis(grid, &modes);
    std::vector<double> q;
    for (const auto& m : modes) {
      const double j = grid.dimension() == 1 ? m[0] : static_cast<double>(m[0]) * m[1];
      q.push_back(1.0 / (j * j));
    }
    if (num_modes > 0 && num_modes < static_cast<int>(q.size())) {
      // keep the num_modes largest eigenvalues (stable order)
      std::vector<std::size_t> order(q.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return q[a] > q[b]; });
      order.resize(static_cast<std::size_t>(num_modes));
      std::sort(order.begin(), order.end());
      Eigen::MatrixXd kept(basis.rows(), num_modes);
      std::vector<double> kq;
      for (int c = 0; c < num_modes; ++c) {
        kept.col(c) = basis.col(static_cast<Eigen::Index>(order[static_cast<std::size_t>(c)]));
        kq.push_back(q[order[static_cast<std::size_t>(c)]]);
      }
      basis = std::move(kept);
      q = std::move(kq);
    }
    return {grid, std::move(q), std::move(basis), CounterRng(seed, path_index)};
  }

  /// Delta W = sum_j sqrt(q_j dt) xi_j e_j. Always consumes ceil(J/2) counters.
  GridFunction sample_increment(double dt) {
    if (!(dt >= 0.0)) throw std::invalid_argument("sample_increment: dt must be non-negative");
    const auto j = static_cast<Eigen::Index>(eigenvalues_.size());
    Eigen::VectorXd xi(j);
    for (Eigen::Index k = 0; k < j; k += 2) {
      const auto z = rng_.normal_pair();
      xi[k] = z[0];
      if (k + 1 < j) xi[k + 1] = z[1];
    }
    GridFunction dw(grid_);
    if (dt == 0.0) return dw;
    dw.values = eigenfunctions_ * (std::sqrt(dt) * sqrt_q_.cwiseProduct(xi));
    return dw;
  }

  /// <f, e_j>_h
  [[nodiscard]] double coefficient(const GridFunction& f, int j) const {
    return grid_.cell_volume() * f.values.dot(eigenfunctions_.col(j));
  }

  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] const std::vector<double>& eigenvalues() const { return eigenvalues_; }
  [[nodiscard]] const Eigen::MatrixXd& eigenfunctions() const { return eigenfunctions_; }
  [[nodiscard]] const CounterRng& rng() const { return rng_; }
  [[nodiscard]] double trace() const {
    double s = 0.0;
    for (double q : eigenvalues_) s += q;
    return s;
  }

 private:
  Grid grid_;
  std::vector<double> eigenvalues_;
  Eigen::MatrixXd eigenfunctions_;
  Eigen::VectorXd sqrt_q_;
  CounterRng rng_;
};

}  // namespace hspde

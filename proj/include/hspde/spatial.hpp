#pragma once

// Spatial discretization on (0,1)^d with homogeneous Dirichlet data.
//
// The divergence-form operator is assembled on elements (intervals in 1D, the two
// triangles of each grid square in 2D) carrying a constant gradient, and mapped back
// to nodes with the lumped midpoint weights h^d. This makes the discrete integration
// by parts  <-div_h a, v>_h = sum_e |e| a_e . (grad_h v)_e  an algebraic identity.
// For a(xi) = xi it reduces to the standard 3-point / 5-point Laplacian.

#include "hspde/grid.hpp"
#include "hspde/rng.hpp"
#include "hspde/stats.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hspde {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Leray-Lions coefficient a(x, lambda, xi) with the constants of its structure conditions.
struct LerayLionsCoeff {
  double p = 2.0;
  double nu = 1.0;
  std::function<Vec2(const Point&, double, const Vec2&)> a_eval;
  /// Optional exact derivatives (d a / d xi, d a / d lambda); finite differences otherwise.
  std::function<void(const Point&, double, const Vec2&, Mat2&, Vec2&)> a_jacobian;
  double c1 = 1.0, c2 = 0.0, c3 = 1.0, c4 = 0.0, c5 = 0.0;
  std::function<double(const Point&)> kappa = [](const Point&) { return 0.0; };
  std::function<double(const Point&)> g = [](const Point&) { return 0.0; };
  std::function<double(const Point&)> h_fun = [](const Point&) { return 0.0; };
  std::string name = "custom";

  Vec2 operator()(const Point& x, double lambda, const Vec2& xi) const { return a_eval(x, lambda, xi); }

  void validate(int dimension) const {
    const double lower = std::max(1.0, 2.0 * dimension / (dimension + 2.0));
    if (!(p > lower)) throw std::invalid_argument("operator.p must exceed max{1, 2d/(d+2)}");
    if (!(nu >= 1.0 && nu < p)) throw std::invalid_argument("operator.nu must lie in [1, p)");
    if (!(c1 > 0.0) || c2 < 0.0 || c3 < 0.0 || c4 < 0.0 || c5 < 0.0) {
      throw std::invalid_argument("structure constants need c1 > 0 and c2..c5 >= 0");
    }
    if (!a_eval) throw std::invalid_argument("operator has no evaluation function");
  }
};

namespace detail {
/// |xi|^{p-2} xi, regularized as (|xi|^2 + eps^2)^{(p-2)/2} xi when p < 2.
inline Vec2 p_flux(const Vec2& xi, double p, double eps) {
  if (p == 2.0) return xi;
  const double s = xi.squaredNorm() + (p < 2.0 ? eps * eps : 0.0);
  if (s == 0.0) return Vec2::Zero();
  return std::pow(s, 0.5 * (p - 2.0)) * xi;
}

inline Mat2 p_flux_jacobian(const Vec2& xi, double p, double eps) {
  if (p == 2.0) return Mat2::Identity();
  const double s = xi.squaredNorm() + (p < 2.0 ? eps * eps : 0.0);
  if (s == 0.0) return Mat2::Zero();
  const double w = std::pow(s, 0.5 * (p - 2.0));
  return w * Mat2::Identity() + (p - 2.0) * (w / s) * (xi * xi.transpose());
}
}  // namespace detail

/// a(x, lambda, xi) = |xi|^{p-2} xi.
inline LerayLionsCoeff p_laplacian(double p, double eps_a = 1e-12) {
  LerayLionsCoeff c;
  c.p = p;
  c.nu = 1.0;
  c.a_eval = [p, eps_a](const Point&, double, const Vec2& xi) { return detail::p_flux(xi, p, eps_a); };
  c.a_jacobian = [p, eps_a](const Point&, double, const Vec2& xi, Mat2& dxi, Vec2& dl) {
    dxi = detail::p_flux_jacobian(xi, p, eps_a);
    dl.setZero();
  };
  if (p < 2.0) {
    // (s + eps^2)^{(p-2)/2} s >= 2^{(p-2)/2} |xi|^p - 2^{(p-2)/2} eps^p
    c.c1 = std::pow(2.0, 0.5 * (p - 2.0));
    const double k = -c.c1 * std::pow(eps_a, p);
    c.kappa = [k](const Point&) { return k; };
  }
  c.name = "p_laplacian";
  return c;
}

/// a(x, lambda, xi) = |xi|^{p-2} xi - F(lambda), F(lambda) = L sin(lambda) e with |e| = 1.
///
/// Coercivity by Young: L|lambda||xi| <= |xi|^p / 2 + C2 |lambda|^{p'}, so nu = p' < p needs p > 2.
inline LerayLionsCoeff p_laplacian_convection(double p, double lipschitz, int dimension) {
  if (!(p > 2.0)) throw std::invalid_argument("convection prototype needs p > 2");
  LerayLionsCoeff c;
  c.p = p;
  const double pp = p / (p - 1.0);
  c.nu = pp;
  const Vec2 e = dimension == 1 ? Vec2(1.0, 0.0) : Vec2(1.0, 1.0) / std::sqrt(2.0);
  c.a_eval = [p, lipschitz, e](const Point&, double lambda, const Vec2& xi) {
    return Vec2(detail::p_flux(xi, p, 0.0) - lipschitz * std::sin(lambda) * e);
  };
  c.a_jacobian = [p, lipschitz, e](const Point&, double lambda, const Vec2& xi, Mat2& dxi, Vec2& dl) {
    dxi = detail::p_flux_jacobian(xi, p, 0.0);
    dl = -lipschitz * std::cos(lambda) * e;
  };
  c.c1 = 0.5;
  c.c2 = std::pow(0.5 * p, -1.0 / (p - 1.0)) * std::pow(lipschitz, pp) / pp;
  c.c3 = 1.0;
  c.c4 = 0.0;
  c.c5 = 0.0;
  c.g = [lipschitz](const Point&) { return lipschitz; };
  c.h_fun = [lipschitz](const Point&) { return lipschitz; };
  c.name = "p_laplacian_convection";
  return c;
}

/// Lipschitz drift f with f(0) = 0.
struct DriftSpec {
  std::function<double(double)> f_eval = [](double) { return 0.0; };
  std::function<double(double)> f_derivative;
  double l_f = 0.0;
  double sup_bound = 0.0;
  std::string name = "zero";

  double operator()(double x) const { return f_eval(x); }
  double derivative(double x) const {
    if (f_derivative) return f_derivative(x);
    const double step = 1e-7 * std::max(1.0, std::abs(x));
    return (f_eval(x + step) - f_eval(x - step)) / (2.0 * step);
  }

  /// Samples the Lipschitz bound, f(0) = 0 and the sup bound on a grid.
  [[nodiscard]] bool validate(std::span<const double> samples) const {
    if (f_eval(0.0) != 0.0) return false;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!within_bound(std::abs(f_eval(samples[i])), sup_bound)) return false;
      for (std::size_t j = i + 1; j < samples.size(); ++j) {
        const double d = std::abs(samples[i] - samples[j]);
        if (!within_bound(std::abs(f_eval(samples[i]) - f_eval(samples[j])), l_f * d)) return false;
      }
    }
    return true;
  }
};

inline DriftSpec zero_drift() { return {}; }

/// f(lambda) = amplitude * sin(lambda): bounded, |amplitude|-Lipschitz, f(0) = 0.
/// A negative amplitude pushes states away from zero.
inline DriftSpec sine_drift(double amplitude) {
  DriftSpec d;
  d.f_eval = [amplitude](double x) { return amplitude * std::sin(x); };
  d.f_derivative = [amplitude](double x) { return amplitude * std::cos(x); };
  d.l_f = std::abs(amplitude);
  d.sup_bound = std::abs(amplitude);
  d.name = "sine";
  return d;
}

/// q := max{2, p, 2p(p-1), p'}.
inline double q_of_p(double p) {
  if (!(p > 1.0)) throw std::invalid_argument("q_of_p: p must exceed 1");
  return std::max({2.0, p, 2.0 * p * (p - 1.0), p / (p - 1.0)});
}

/// Higher-order perturbation (1/n) j(u, v) of order m and growth q.
struct HigherOrderPerturbation {
  int m = 2;
  double q = 2.0;
  double strength = 1.0;
};

inline HigherOrderPerturbation make_perturbation(double p, int n, int m = 2) {
  if (n < 1) throw std::invalid_argument("perturbation needs n >= 1");
  if (m < 1) throw std::invalid_argument("perturbation order m must be >= 1");
  return {m, q_of_p(p), 1.0 / n};
}

/// Grid-dependent operators shared by every path: element connectivity and the
/// finite-difference realizations D^gamma of all multi-indices |gamma| <= m.
class Discretization {
 public:
  struct Element {
    std::array<long, 3> node{-1, -1, -1};  // interior node index, -1 for boundary vertices
    std::array<Vec2, 3> grad{};            // gradient coefficient of each vertex
    int vertices = 2;                      // including boundary vertices
    Point centroid{};
  };
  struct Difference {
    std::array<int, 2> gamma{0, 0};
    SparseMatrix op;  // rows: all positions where D^gamma of a zero-extended function can be non-zero
  };

  Discretization() = default;
  Discretization(const Grid& grid, int m) : grid_(grid), m_(m) {
    if (m < 0) throw std::invalid_argument("difference order m must be >= 0");
    if (grid.n_interior() < m) {
      throw std::invalid_argument("grid too coarse for m=" + std::to_string(m) + ": need n_interior >= m");
    }
    build_elements();
    build_differences();
  }

  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] int m() const { return m_; }
  [[nodiscard]] const std::vector<Element>& elements() const { return elements_; }
  [[nodiscard]] const std::vector<Difference>& differences() const { return diffs_; }
  [[nodiscard]] double element_weight() const { return element_weight_; }

  [[nodiscard]] Vec2 gradient(const Element& e, const Eigen::VectorXd& u) const {
    Vec2 xi = Vec2::Zero();
    for (int a = 0; a < e.vertices; ++a) {
      if (e.node[a] >= 0) xi += e.grad[a] * u[e.node[a]];
    }
    return xi;
  }
  [[nodiscard]] double average(const Element& e, const Eigen::VectorXd& u) const {
    double s = 0.0;
    for (int a = 0; a < e.vertices; ++a) {
      if (e.node[a] >= 0) s += u[e.node[a]];
    }
    return s / e.vertices;
  }

 private:
  void build_elements() {
    const int n = grid_.n_interior();
    const double h = grid_.h();
    auto id = [&](int i, int j) -> long {
      return grid_.interior(i, j) ? static_cast<long>(grid_.index(i, j)) : -1L;
    };
    if (grid_.dimension() == 1) {
      element_weight_ = h;
      for (int i = 0; i <= n; ++i) {
        Element e;
        e.vertices = 2;
        e.node = {id(i, 1), id(i + 1, 1), -1};
        e.grad = {Vec2(-1.0 / h, 0.0), Vec2(1.0 / h, 0.0), Vec2::Zero()};
        e.centroid = {(i + 0.5) * h, 0.0};
        elements_.push_back(e);
      }
      return;
    }
    element_weight_ = 0.5 * h * h;
    for (int j = 0; j <= n; ++j) {
      for (int i = 0; i <= n; ++i) {
        Element lower;
        lower.vertices = 3;
        lower.node = {id(i, j), id(i + 1, j), id(i, j + 1)};
        lower.grad = {Vec2(-1.0 / h, -1.0 / h), Vec2(1.0 / h, 0.0), Vec2(0.0, 1.0 / h)};
        lower.centroid = {(i + 1.0 / 3.0) * h, (j + 1.0 / 3.0) * h};
        elements_.push_back(lower);
        Element upper;
        upper.vertices = 3;
        upper.node = {id(i + 1, j + 1), id(i, j + 1), id(i + 1, j)};
        upper.grad = {Vec2(1.0 / h, 1.0 / h), Vec2(-1.0 / h, 0.0), Vec2(0.0, -1.0 / h)};
        upper.centroid = {(i + 2.0 / 3.0) * h, (j + 2.0 / 3.0) * h};
        elements_.push_back(upper);
      }
    }
  }

  // 1D forward difference of order k on the zero-extended grid: rows i = 1-k .. N.
  [[nodiscard]] SparseMatrix forward_difference_1d(int k) const {
    const int n = grid_.n_interior();
    const double h = grid_.h();
    SparseMatrix d(n + k, n);
    std::vector<Eigen::Triplet<double>> trip;
    for (int row = 0; row < n + k; ++row) {
      const int i = row + 1 - k;
      double binom = 1.0;
      for (int l = 0; l <= k; ++l) {
        if (l > 0) binom = binom * (k - l + 1) / l;
        const int node = i + l;
        if (node >= 1 && node <= n) {
          const double sign = ((k - l) % 2 == 0) ? 1.0 : -1.0;
          trip.emplace_back(row, node - 1, sign * binom / std::pow(h, k));
        }
      }
    }
    d.setFromTriplets(trip.begin(), trip.end());
    return d;
  }

  static SparseMatrix kron(const SparseMatrix& a, const SparseMatrix& b) {
    SparseMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    std::vector<Eigen::Triplet<double>> trip;
    for (int ka = 0; ka < a.outerSize(); ++ka) {
      for (SparseMatrix::InnerIterator ia(a, ka); ia; ++ia) {
        for (int kb = 0; kb < b.outerSize(); ++kb) {
          for (SparseMatrix::InnerIterator ib(b, kb); ib; ++ib) {
            trip.emplace_back(ia.row() * b.rows() + ib.row(), ia.col() * b.cols() + ib.col(), ia.value() * ib.value());
          }
        }
      }
    }
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
  }

  void build_differences() {
    std::vector<SparseMatrix> d1;
    for (int k = 0; k <= m_; ++k) d1.push_back(forward_difference_1d(k));
    if (grid_.dimension() == 1) {
      for (int k = 0; k <= m_; ++k) diffs_.push_back({{k, 0}, d1[static_cast<std::size_t>(k)]});
      return;
    }
    // node index = j * N + i, so D^(g1,g2) = D_y^{g2} (x) D_x^{g1}
    for (int total = 0; total <= m_; ++total) {
      for (int g2 = 0; g2 <= total; ++g2) {
        const int g1 = total - g2;
        diffs_.push_back({{g1, g2}, kron(d1[static_cast<std::size_t>(g2)], d1[static_cast<std::size_t>(g1)])});
      }
    }
  }

  Grid grid_;
  int m_ = 0;
  double element_weight_ = 0.0;
  std::vector<Element> elements_;
  std::vector<Difference> diffs_;
};

namespace detail {
inline void require_finite(const Eigen::VectorXd& v, const char* what) {
  if (!v.allFinite()) throw std::domain_error(std::string(what) + ": non-finite values");
}

inline double signed_pow(double x, double e) { return x == 0.0 ? 0.0 : std::copysign(std::pow(std::abs(x), e), x); }
}  // namespace detail

/// Discrete -div a(x, u, grad u), as the Riesz representative in the L2_h pairing.
inline GridFunction apply_divergence_form(const Discretization& disc, const LerayLionsCoeff& coeff,
                                          const GridFunction& u) {
  GridFunction::require_same_grid(disc.grid(), u.grid);
  GridFunction out(u.grid);
  const double scale = disc.element_weight() / u.grid.cell_volume();
  for (const auto& e : disc.elements()) {
    const Vec2 a = coeff(e.centroid, disc.average(e, u.values), disc.gradient(e, u.values));
    for (int k = 0; k < e.vertices; ++k) {
      if (e.node[k] >= 0) out.values[e.node[k]] += scale * a.dot(e.grad[k]);
    }
  }
  detail::require_finite(out.values, "apply_divergence_form");
  return out;
}

/// sum_e |e| a(x_e, u_e, grad u_e) . grad v_e, the flux pairing of u against v.
inline double flux_pairing(const Discretization& disc, const LerayLionsCoeff& coeff, const GridFunction& u,
                           const GridFunction& v) {
  double s = 0.0;
  for (const auto& e : disc.elements()) {
    s += disc.element_weight() *
         coeff(e.centroid, disc.average(e, u.values), disc.gradient(e, u.values)).dot(disc.gradient(e, v.values));
  }
  return s;
}

/// j(u, v) = (u, v)_{H^m_0} + int sum_{|gamma|<=m} |D^gamma u|^{q-2} D^gamma u D^gamma v.
inline double j_form(const Discretization& disc, const HigherOrderPerturbation& pert, const GridFunction& u,
                     const GridFunction& v) {
  GridFunction::require_same_grid(disc.grid(), u.grid);
  GridFunction::require_same_grid(u.grid, v.grid);
  if (pert.m != disc.m()) throw std::invalid_argument("perturbation order does not match discretization");
  double s = 0.0;
  for (const auto& d : disc.differences()) {
    const Eigen::VectorXd du = d.op * u.values;
    const Eigen::VectorXd dv = d.op * v.values;
    for (Eigen::Index r = 0; r < du.size(); ++r) {
      s += (du[r] + detail::signed_pow(du[r], pert.q - 1.0)) * dv[r];
    }
  }
  return u.grid.cell_volume() * s;
}

/// Riesz representative of v -> j(u, v).
inline GridFunction j_operator(const Discretization& disc, const HigherOrderPerturbation& pert, const GridFunction& u) {
  GridFunction::require_same_grid(disc.grid(), u.grid);
  GridFunction out(u.grid);
  for (const auto& d : disc.differences()) {
    Eigen::VectorXd du = d.op * u.values;
    for (Eigen::Index r = 0; r < du.size(); ++r) du[r] += detail::signed_pow(du[r], pert.q - 1.0);
    out.values += d.op.transpose() * du;
  }
  detail::require_finite(out.values, "j_operator");
  return out;
}

/// A_n(u) = -div_h a(x, u, grad u) + strength * j-operator(u) + f(u); no perturbation when pert is empty.
inline GridFunction apply_A_n(const Discretization& disc, const LerayLionsCoeff& coeff, const DriftSpec& drift,
                              const std::optional<HigherOrderPerturbation>& pert, const GridFunction& u) {
  GridFunction out = apply_divergence_form(disc, coeff, u);
  if (pert) out.values += pert->strength * j_operator(disc, *pert, u).values;
  for (Eigen::Index i = 0; i < out.values.size(); ++i) out.values[i] += drift(u.values[i]);
  detail::require_finite(out.values, "apply_A_n");
  return out;
}

/// Jacobian of apply_A_n at u (sparse, nodes x nodes).
inline SparseMatrix jacobian_A_n(const Discretization& disc, const LerayLionsCoeff& coeff, const DriftSpec& drift,
                                 const std::optional<HigherOrderPerturbation>& pert, const GridFunction& u) {
  const auto n = static_cast<Eigen::Index>(u.size());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(disc.elements().size() * 9 + static_cast<std::size_t>(n)));
  const double scale = disc.element_weight() / u.grid.cell_volume();
  for (const auto& e : disc.elements()) {
    const double lambda = disc.average(e, u.values);
    const Vec2 xi = disc.gradient(e, u.values);
    Mat2 dxi;
    Vec2 dl;
    if (coeff.a_jacobian) {
      coeff.a_jacobian(e.centroid, lambda, xi, dxi, dl);
    } else {
      const double step = 1e-7 * std::max(1.0, xi.norm());
      for (int c = 0; c < 2; ++c) {
        Vec2 xp = xi, xm = xi;
        xp[c] += step;
        xm[c] -= step;
        dxi.col(c) = (coeff(e.centroid, lambda, xp) - coeff(e.centroid, lambda, xm)) / (2.0 * step);
      }
      const double ls = 1e-7 * std::max(1.0, std::abs(lambda));
      dl = (coeff(e.centroid, lambda + ls, xi) - coeff(e.centroid, lambda - ls, xi)) / (2.0 * ls);
    }
    for (int a = 0; a < e.vertices; ++a) {
      if (e.node[a] < 0) continue;
      for (int b = 0; b < e.vertices; ++b) {
        if (e.node[b] < 0) continue;
        const double v = e.grad[a].dot(dxi * e.grad[b]) + e.grad[a].dot(dl) / e.vertices;
        trip.emplace_back(e.node[a], e.node[b], scale * v);
      }
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) trip.emplace_back(i, i, drift.derivative(u.values[i]));
  SparseMatrix jac(n, n);
  jac.setFromTriplets(trip.begin(), trip.end());
  if (pert) {
    for (const auto& d : disc.differences()) {
      const Eigen::VectorXd du = d.op * u.values;
      Eigen::VectorXd w(du.size());
      for (Eigen::Index r = 0; r < du.size(); ++r) w[r] = 1.0 + (pert->q - 1.0) * std::pow(std::abs(du[r]), pert->q - 2.0);
      const SparseMatrix block = d.op.transpose() * w.asDiagonal() * d.op;
      jac += pert->strength * block;
    }
  }
  return jac;
}

/// Discrete norms, all consistent with the midpoint quadrature.
struct Norms {
  double l1 = 0.0;
  double l2 = 0.0;
  double lp = 0.0;
  double w1p_seminorm = 0.0;  // ||grad u||_p
  double hm0 = 0.0;           // full H^m norm (all |gamma| <= m, including gamma = 0)
  double wmq = 0.0;           // full W^{m,q} norm
};

inline Norms norms(const Discretization& disc, const GridFunction& u, double p, double q) {
  GridFunction::require_same_grid(disc.grid(), u.grid);
  const double vol = u.grid.cell_volume();
  Norms r;
  r.l1 = vol * u.values.cwiseAbs().sum();
  r.l2 = std::sqrt(vol * u.values.squaredNorm());
  r.lp = std::pow(vol * u.values.cwiseAbs().array().pow(p).sum(), 1.0 / p);
  double gp = 0.0;
  for (const auto& e : disc.elements()) gp += disc.element_weight() * std::pow(disc.gradient(e, u.values).norm(), p);
  r.w1p_seminorm = std::pow(gp, 1.0 / p);
  double h2 = 0.0, wq = 0.0;
  for (const auto& d : disc.differences()) {
    const Eigen::VectorXd du = d.op * u.values;
    h2 += du.squaredNorm();
    wq += du.cwiseAbs().array().pow(q).sum();
  }
  r.hm0 = std::sqrt(vol * h2);
  r.wmq = std::pow(vol * wq, 1.0 / q);
  return r;
}

struct StructureReport {
  std::size_t samples = 0;
  double worst_monotonicity = std::numeric_limits<double>::infinity();  // (A1) margin
  double worst_coercivity = std::numeric_limits<double>::infinity();    // (A2) lower margin
  double worst_growth = std::numeric_limits<double>::infinity();        // (A2) upper margin
  double worst_continuity = std::numeric_limits<double>::infinity();    // (A3) margin
  std::size_t violations_a1 = 0, violations_a2 = 0, violations_a3 = 0;
  [[nodiscard]] bool a1_ok() const { return violations_a1 == 0; }
  [[nodiscard]] bool a2_ok() const { return violations_a2 == 0; }
  [[nodiscard]] bool a3_ok() const { return violations_a3 == 0; }
  [[nodiscard]] bool pass() const { return a1_ok() && a2_ok() && a3_ok(); }
};

/// Monte Carlo spot check of (A1)-(A3) on random (x, lambda, xi, eta).
inline StructureReport check_structure_conditions(const LerayLionsCoeff& coeff, int dimension, std::size_t samples,
                                                  CounterRng& rng, double range = 5.0) {
  StructureReport r;
  r.samples = samples;
  auto sym = [&](double u) { return range * (2.0 * u - 1.0); };
  auto tol = [](double scale) { return 1e-12 * std::max(1.0, scale); };
  for (std::size_t s = 0; s < samples; ++s) {
    const auto u1 = rng.uniform_pair();
    const auto u2 = rng.uniform_pair();
    const auto u3 = rng.uniform_pair();
    const auto u4 = rng.uniform_pair();
    const Point x{u1[0], dimension == 2 ? u1[1] : 0.0};
    const double lambda = sym(u2[0]);
    const double lambda2 = sym(u2[1]);
    const Vec2 xi(sym(u3[0]), dimension == 2 ? sym(u3[1]) : 0.0);
    const Vec2 eta(sym(u4[0]), dimension == 2 ? sym(u4[1]) : 0.0);

    const Vec2 a_xi = coeff(x, lambda, xi);
    const Vec2 a_eta = coeff(x, lambda, eta);
    const double mono = (a_xi - a_eta).dot(xi - eta);
    r.worst_monotonicity = std::min(r.worst_monotonicity, mono);
    if (mono < -tol(std::abs(mono))) ++r.violations_a1;

    const double nx = xi.norm();
    const double lower = coeff.kappa(x) + coeff.c1 * std::pow(nx, coeff.p) - coeff.c2 * std::pow(std::abs(lambda), coeff.nu);
    const double coer = a_xi.dot(xi) - lower;
    const double upper = coeff.c3 * std::pow(nx, coeff.p - 1.0) + coeff.c4 * std::pow(std::abs(lambda), coeff.p - 1.0) +
                         coeff.g(x) - a_xi.norm();
    r.worst_coercivity = std::min(r.worst_coercivity, coer);
    r.worst_growth = std::min(r.worst_growth, upper);
    if (coer < -tol(std::abs(lower)) || upper < -tol(a_xi.norm())) ++r.violations_a2;

    const Vec2 a_l2 = coeff(x, lambda2, xi);
    const double cont = (coeff.c5 * std::pow(nx, coeff.p - 1.0) + coeff.h_fun(x)) * std::abs(lambda - lambda2) -
                        (a_xi - a_l2).norm();
    r.worst_continuity = std::min(r.worst_continuity, cont);
    if (cont < -tol(a_xi.norm())) ++r.violations_a3;
  }
  return r;
}

inline nlohmann::json to_json(const StructureReport& r) {
  return {{"samples", r.samples},
          {"worst_monotonicity", r.worst_monotonicity},
          {"worst_coercivity", r.worst_coercivity},
          {"worst_growth", r.worst_growth},
          {"worst_continuity", r.worst_continuity},
          {"a1_ok", r.a1_ok()},
          {"a2_ok", r.a2_ok()},
          {"a3_ok", r.a3_ok()},
          {"pass", r.pass()}};
}

/// Numerically estimated embedding constants of the discrete setting.
struct EmbeddingConstants {
  double c_poin = 0.0;  // ||u||_2 <= c_poin ||grad u||_2
  double c_e = 0.0;     // ||u||_inf + ||grad u||_{2p} <= c_e ||u||_{H^m_0}, sampled lower estimate
};

/// c_poin from the smallest discrete Dirichlet eigenvalue; c_e maximized over the
/// sine basis and random combinations of it.
inline EmbeddingConstants estimate_embedding_constants(const Discretization& disc, double p, std::size_t random_probes = 64,
                                                       std::uint64_t seed = 7) {
  const Grid& g = disc.grid();
  const double h = g.h();
  const double mu1 = g.dimension() * 4.0 / (h * h) * std::pow(std::sin(std::numbers::pi * h / 2.0), 2);
  EmbeddingConstants c;
  c.c_poin = 1.0 / std::sqrt(mu1);
  const auto n = static_cast<Eigen::Index>(g.size());
  auto ratio = [&](const Eigen::VectorXd& v) {
    const GridFunction u(g, v);
    const Norms nm = norms(disc, u, 2.0 * p, 2.0);
    return nm.hm0 > 0.0 ? (v.cwiseAbs().maxCoeff() + nm.w1p_seminorm) / nm.hm0 : 0.0;
  };
  CounterRng rng(seed, 0);
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd v(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const Point x = g.coords(static_cast<std::size_t>(k));
      const double jj = static_cast<double>(j % g.n_interior() + 1);
      const double j2 = static_cast<double>(j / g.n_interior() + 1);
      v[k] = std::sin(jj * std::numbers::pi * x[0]) * (g.dimension() == 2 ? std::sin(j2 * std::numbers::pi * x[1]) : 1.0);
    }
    c.c_e = std::max(c.c_e, ratio(v));
  }
  for (std::size_t s = 0; s < random_probes; ++s) {
    Eigen::VectorXd v(n);
    for (Eigen::Index k = 0; k < n; ++k) v[k] = 2.0 * rng.uniform() - 1.0;
    c.c_e = std::max(c.c_e, ratio(v));
  }
  return c;
}

/// N_0 = max{ceil(sqrt(C_sigma)), (2^{q-1} C_2 C_E^{2 nu} C_Poin^nu)^{-1}}.
/// With C_2 = 0 the coercivity constraint is vacuous and only the first entry remains.
inline double n0_threshold(double c_sigma, double q, double c2, double nu, const EmbeddingConstants& emb) {
  const double first = std::ceil(std::sqrt(c_sigma));
  if (c2 <= 0.0) return first;
  const double second = 1.0 / (std::pow(2.0, q - 1.0) * c2 * std::pow(emb.c_e, 2.0 * nu) * std::pow(emb.c_poin, nu));
  return std::max(first, second);
}

// ---- initial data -------------------------------------------------------------

inline GridFunction sine_profile(const Grid& g, double amplitude = 1.0) {
  return GridFunction::from_function(g, [&](const Point& x) {
    double v = amplitude * std::sin(std::numbers::pi * x[0]);
    if (g.dimension() == 2) v *= std::sin(std::numbers::pi * x[1]);
    return v;
  });
}

/// Smooth compactly supported bump amplitude * exp(1 - 1/(1 - r^2)), r = |x - center| / width.
inline GridFunction bump_profile(const Grid& g, double amplitude = 1.0, double center = 0.5, double width = 0.25) {
  return GridFunction::from_function(g, [&](const Point& x) {
    double r2 = (x[0] - center) * (x[0] - center);
    if (g.dimension() == 2) r2 += (x[1] - center) * (x[1] - center);
    r2 /= width * width;
    return r2 < 1.0 ? amplitude * std::exp(1.0 - 1.0 / (1.0 - r2)) : 0.0;
  });
}

/// Random smooth profile: sum_j c_j j^-2 sqrt(2) sin(j pi x) with c_j uniform in [-1, 1].
inline GridFunction random_profile(const Grid& g, std::uint64_t seed, double amplitude = 1.0, int modes = 8) {
  CounterRng rng(seed, 0xC0FFEE);
  std::vector<double> coef(static_cast<std::size_t>(modes * (g.dimension() == 2 ? modes : 1)));
  for (auto& c : coef) c = 2.0 * rng.uniform() - 1.0;
  return GridFunction::from_function(g, [&](const Point& x) {
    double v = 0.0;
    std::size_t k = 0;
    for (int j2 = 1; j2 <= (g.dimension() == 2 ? modes : 1); ++j2) {
      for (int j1 = 1; j1 <= modes; ++j1, ++k) {
        double b = std::sin(j1 * std::numbers::pi * x[0]) / (j1 * j1);
        if (g.dimension() == 2) b *= std::sin(j2 * std::numbers::pi * x[1]) / (j2 * j2);
        v += coef[k] * b;
      }
    }
    return amplitude * v;
  });
}

/// Grid function CSV: 1D one value per line, 2D one grid row per line; '#' lines are comments.
inline void save_grid_function_csv(const GridFunction& u, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# n_interior=" << u.grid.n_interior() << ",dimension=" << u.grid.dimension() << '\n';
  out.precision(17);
  const int n = u.grid.n_interior();
  if (u.grid.dimension() == 1) {
    for (Eigen::Index i = 0; i < u.values.size(); ++i) out << u.values[i] << '\n';
  } else {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) out << (i ? "," : "") << u.values[j * n + i];
      out << '\n';
    }
  }
}

inline GridFunction load_grid_function_csv(const Grid& g, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<double> vals;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
  }
  if (vals.size() != g.size()) {
    throw GridMismatch(path + ": expected " + std::to_string(g.size()) + " values, found " + std::to_string(vals.size()));
  }
  return {g, Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()))};
}

}  // namespace hspde

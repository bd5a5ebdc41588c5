#pragma once

// Lipschitz regularization of a Hoelder coefficient by inf-convolution,
//   sigma_n(t, lambda) = inf_mu ( sigma(t, mu) + n |lambda - mu| ),
// together with the closed-form constants that certify it.

#include "hspde/stats.hpp"

#include <boost/math/tools/minima.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hspde {

/// Hoelder coefficient sigma(t, lambda) with its structural constants.
struct HolderSpec {
  double alpha = 1.0;    // Hoelder exponent in (0,1]
  double l_alpha = 1.0;  // Hoelder constant
  double c_sigma = 1.0;  // growth: sigma^2 <= c_sigma (1 + lambda^2)
  std::function<double(double, double)> eval;
  bool time_independent = true;
  std::string name = "custom";

  double operator()(double t, double lambda) const { return eval(t, lambda); }

  void validate_constants() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("sigma.alpha must lie in (0,1], got " + std::to_string(alpha));
    if (!(l_alpha > 0.0)) throw std::invalid_argument("sigma.l_alpha must be positive");
    if (!(c_sigma > 0.0)) throw std::invalid_argument("sigma.c_sigma must be positive");
    if (!eval) throw std::invalid_argument("sigma has no evaluation function");
  }
};

/// Smallest C with (L |x|^alpha)^2 <= C (1 + x^2) for all x.
inline double power_law_growth_constant(double alpha, double l_alpha) {
  if (alpha >= 1.0) return l_alpha * l_alpha;
  return l_alpha * l_alpha * std::pow(alpha / (1.0 - alpha), alpha) * (1.0 - alpha);
}

/// sigma(t, lambda) = L |lambda|^alpha; tight for every bound below.
inline HolderSpec power_law_sigma(double alpha, double l_alpha = 1.0) {
  HolderSpec s;
  s.alpha = alpha;
  s.l_alpha = l_alpha;
  s.c_sigma = power_law_growth_constant(alpha, l_alpha);
  s.eval = [alpha, l_alpha](double, double x) { return l_alpha * std::pow(std::abs(x), alpha); };
  s.name = "power";
  s.validate_constants();
  return s;
}

inline HolderSpec zero_sigma() {
  HolderSpec s;
  s.eval = [](double, double) { return 0.0; };
  s.name = "zero";
  return s;
}

/// sigma(t, lambda) = slope * lambda (Lipschitz, alpha = 1).
inline HolderSpec linear_sigma(double slope) {
  HolderSpec s;
  s.alpha = 1.0;
  s.l_alpha = std::abs(slope);
  s.c_sigma = slope * slope;
  s.eval = [slope](double, double x) { return slope * x; };
  s.name = "linear";
  s.validate_constants();
  return s;
}

struct HolderValidation {
  bool holder_ok = true;   // |s(l)-s(m)| <= L |l-m|^alpha
  bool zero_ok = true;     // s(t,0) = 0
  bool growth_ok = true;   // s^2 <= C (1+l^2)
  double worst_holder_ratio = 0.0;
  double worst_growth_ratio = 0.0;
  [[nodiscard]] bool ok() const { return holder_ok && zero_ok && growth_ok; }
};

/// Samples the structural conditions of a coefficient on all pairs of the given grids.
inline HolderValidation validate_holder(const HolderSpec& s, std::span<const double> t_grid,
                                        std::span<const double> lambda_grid) {
  HolderValidation v;
  for (double t : t_grid) {
    if (s(t, 0.0) != 0.0) v.zero_ok = false;
    for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
      const double li = lambda_grid[i];
      const double si = s(t, li);
      const double growth = si * si / (s.c_sigma * (1.0 + li * li));
      v.worst_growth_ratio = std::max(v.worst_growth_ratio, growth);
      for (std::size_t j = i + 1; j < lambda_grid.size(); ++j) {
        const double d = std::abs(li - lambda_grid[j]);
        if (d == 0.0) continue;
        const double ratio = std::abs(si - s(t, lambda_grid[j])) / (s.l_alpha * std::pow(d, s.alpha));
        v.worst_holder_ratio = std::max(v.worst_holder_ratio, ratio);
      }
    }
  }
  v.holder_ok = within_bound(v.worst_holder_ratio, 1.0);
  v.growth_ok = within_bound(v.worst_growth_ratio, 1.0);
  return v;
}

namespace detail {
inline void require_open_unit_alpha(double alpha, const char* what) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument(std::string(what) + ": alpha must lie in (0,1), got " + std::to_string(alpha));
  }
}
}  // namespace detail

/// Maximizer of h_n(r) = L r^alpha - n r on [0, inf).
inline double r0(double alpha, double l_alpha, double n) {
  detail::require_open_unit_alpha(alpha, "r0");
  if (!(l_alpha > 0.0) || !(n >= 1.0)) throw std::invalid_argument("r0: need l_alpha > 0 and n >= 1");
  return std::pow(n / (l_alpha * alpha), 1.0 / (alpha - 1.0));
}

/// max_r h_n(r): an upper bound for sup_lambda |sigma_n - sigma|.
inline double gap_bound(double alpha, double l_alpha, double n) {
  detail::require_open_unit_alpha(alpha, "gap_bound");
  const double e = alpha / (alpha - 1.0);
  return std::pow(n, e) * (1.0 - alpha) / (std::pow(l_alpha, 1.0 / (alpha - 1.0)) * std::pow(alpha, e));
}

/// The n-uniform gap bound; equals gap_bound at n = 1.
inline double c_alpha(double alpha, double l_alpha) {
  detail::require_open_unit_alpha(alpha, "c_alpha");
  const double e = alpha / (alpha - 1.0);
  return (1.0 - alpha) / (std::pow(l_alpha, 1.0 / (alpha - 1.0)) * std::pow(alpha, e));
}

/// Smallest integer >= sqrt(c_sigma).
inline int n0(double c_sigma) {
  if (!(c_sigma > 0.0)) throw std::invalid_argument("n0: c_sigma must be positive");
  auto n = static_cast<int>(std::ceil(std::sqrt(c_sigma)));
  // ceil(sqrt) can overshoot by one when c_sigma is a perfect square with roundoff.
  if (n > 1 && static_cast<double>(n - 1) * (n - 1) >= c_sigma) --n;
  return std::max(n, 1);
}

/// Localization radius: any minimizer other than mu = lambda satisfies |lambda - mu| <= R.
inline double localization_radius(double alpha, double l_alpha, int n) {
  return std::pow(l_alpha / n, 1.0 / (1.0 - alpha));
}

/// sigma together with the regularization index and the minimization settings.
struct RegularizedSigma {
  HolderSpec base;
  int n = 1;
  double bracket_radius = 0.0;
  int grid_points = 4096;
};

inline RegularizedSigma make_regularized(HolderSpec base, int n, int grid_points = 4096,
                                         double bracket_factor = 2.0) {
  base.validate_constants();
  if (n < n0(base.c_sigma)) {
    throw std::invalid_argument("regularization index n=" + std::to_string(n) + " is below n0=" +
                                std::to_string(n0(base.c_sigma)));
  }
  if (base.alpha == 1.0 && n < base.l_alpha) {
    throw std::invalid_argument("Lipschitz sigma needs n >= l_alpha so that sigma_n = sigma");
  }
  if (grid_points < 3) throw std::invalid_argument("grid_points must be >= 3");
  RegularizedSigma r;
  r.n = n;
  r.grid_points = grid_points;
  r.bracket_radius = base.alpha < 1.0 ? bracket_factor * localization_radius(base.alpha, base.l_alpha, n) : 0.0;
  r.base = std::move(base);
  return r;
}

/// Error bound of the grid scan: the nearest grid point to any minimizer is
/// within delta/2, where the objective moves by at most L (delta/2)^alpha + n delta/2.
inline double grid_error_bound(const RegularizedSigma& reg) {
  if (reg.base.alpha >= 1.0) return 0.0;
  const double delta = 2.0 * reg.bracket_radius / (reg.grid_points - 1);
  return reg.base.l_alpha * std::pow(0.5 * delta, reg.base.alpha) + reg.n * 0.5 * delta;
}

/// sigma_n(t, lambda) by grid minimization over [lambda - R, lambda + R] followed by
/// a Brent refinement around the best grid point. The candidates mu = lambda and
/// mu = 0 (where sigma vanishes) are always included.
inline double sigma_n_eval(const RegularizedSigma& reg, double t, double lambda) {
  if (!std::isfinite(lambda)) throw std::domain_error("sigma_n_eval: non-finite lambda");
  const HolderSpec& s = reg.base;
  if (reg.n < n0(s.c_sigma)) throw std::invalid_argument("sigma_n_eval: n below n0");
  // Lipschitz sigma with n >= L is a fixed point of the inf-convolution.
  if (s.alpha >= 1.0) return s(t, lambda);

  const double n = reg.n;
  auto objective = [&](double mu) { return s(t, mu) + n * std::abs(lambda - mu); };

  double best = std::min(s(t, lambda), n * std::abs(lambda));
  const double r = reg.bracket_radius;
  const int g = reg.grid_points;
  const double delta = 2.0 * r / (g - 1);
  const double lo = lambda - r;
  int best_k = 0;
  double best_grid = std::numeric_limits<double>::infinity();
  for (int k = 0; k < g; ++k) {
    const double v = objective(lo + k * delta);
    if (v < best_grid) {
      best_grid = v;
      best_k = k;
    }
  }
  best = std::min(best, best_grid);
  const double a = lo + std::max(best_k - 1, 0) * delta;
  const double b = lo + std::min(best_k + 1, g - 1) * delta;
  std::uintmax_t iters = 200;
  const auto refined = boost::math::tools::brent_find_minima(objective, a, b, std::numeric_limits<double>::digits, iters);
  return std::min(best, refined.second);
}

struct SupGap {
  double gap = 0.0;
  double argmax = 0.0;
};

/// Dense lambda grid on [lo, hi]: uniform points plus geometric clustering at the
/// origin, where the gap concentrates at scale r0.
inline std::vector<double> dense_lambda_grid(double lo, double hi, int uniform_points = 2001, int per_decade = 40,
                                             int min_exponent = -14) {
  std::vector<double> xs;
  xs.reserve(static_cast<std::size_t>(uniform_points + 2 * per_decade * 16));
  for (int i = 0; i < uniform_points; ++i) xs.push_back(lo + (hi - lo) * i / (uniform_points - 1));
  const double top = std::log10(std::max(std::abs(lo), std::abs(hi)));
  for (double e = min_exponent; e <= top; e += 1.0 / per_decade) {
    const double x = std::pow(10.0, e);
    if (x <= hi) xs.push_back(x);
    if (-x >= lo) xs.push_back(-x);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  return xs;
}

/// Measured sup over [lo, hi] of sigma - sigma_n: dense scan, then Brent refinement.
inline SupGap measure_sup_gap(const RegularizedSigma& reg, double t, double lo, double hi) {
  const auto xs = dense_lambda_grid(lo, hi);
  auto gap = [&](double x) { return reg.base(t, x) - sigma_n_eval(reg, t, x); };
  SupGap best{-std::numeric_limits<double>::infinity(), 0.0};
  std::size_t best_i = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double g = gap(xs[i]);
    if (g > best.gap) {
      best = {g, xs[i]};
      best_i = i;
    }
  }
  const double a = xs[best_i == 0 ? 0 : best_i - 1];
  const double b = xs[std::min(best_i + 1, xs.size() - 1)];
  if (b > a) {
    std::uintmax_t iters = 200;
    const auto r = boost::math::tools::brent_find_minima([&](double x) { return -gap(x); }, a, b,
                                                         std::numeric_limits<double>::digits, iters);
    if (-r.second > best.gap) best = {-r.second, r.first};
  }
  return best;
}

/// Outcome of checking the certified properties of sigma_n on sampled points.
struct RegularizationReport {
  int n = 0;
  double max_overshoot = 0.0;  // max (sigma_n - sigma), must be <= 0
  double max_slope = 0.0;      // max finite-difference slope of sigma_n
  double max_gap = 0.0;        // max |sigma_n - sigma|
  double bound = 0.0;          // gap_bound(alpha, L, n); 0 for Lipschitz sigma
  double uniform_bound = 0.0;  // c_alpha(alpha, L)
  double max_growth_ratio = 0.0;  // sigma_n^2 / (2 (C_alpha^2 + C_sigma (1 + lambda^2)))
  bool below_sigma = true;
  bool lipschitz = true;
  bool gap_within_bound = true;
  bool growth_within_bound = true;
  [[nodiscard]] bool pass() const { return below_sigma && lipschitz && gap_within_bound && growth_within_bound; }
};

inline RegularizationReport verify_regularization(const RegularizedSigma& reg, std::span<const double> lambda_grid,
                                                  std::span<const double> t_grid) {
  std::vector<double> lambdas(lambda_grid.begin(), lambda_grid.end());
  std::sort(lambdas.begin(), lambdas.end());
  lambdas.erase(std::unique(lambdas.begin(), lambdas.end()), lambdas.end());

  const HolderSpec& s = reg.base;
  RegularizationReport rep;
  rep.n = reg.n;
  const bool holder = s.alpha < 1.0;
  rep.bound = holder ? gap_bound(s.alpha, s.l_alpha, reg.n) : 0.0;
  rep.uniform_bound = holder ? c_alpha(s.alpha, s.l_alpha) : 0.0;
  rep.max_overshoot = -std::numeric_limits<double>::infinity();

  for (double t : t_grid) {
    double prev = 0.0;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      const double x = lambdas[i];
      const double sn = sigma_n_eval(reg, t, x);
      const double sv = s(t, x);
      rep.max_overshoot = std::max(rep.max_overshoot, sn - sv);
      rep.max_gap = std::max(rep.max_gap, std::abs(sn - sv));
      const double growth = sn * sn / (2.0 * (rep.uniform_bound * rep.uniform_bound + s.c_sigma * (1.0 + x * x)));
      rep.max_growth_ratio = std::max(rep.max_growth_ratio, growth);
      if (i > 0) rep.max_slope = std::max(rep.max_slope, std::abs(sn - prev) / (x - lambdas[i - 1]));
      prev = sn;
    }
  }
  if (lambdas.empty() || t_grid.empty()) rep.max_overshoot = 0.0;
  rep.below_sigma = rep.max_overshoot <= 1e-9;
  rep.lipschitz = rep.max_slope <= reg.n * (1.0 + 1e-6);
  rep.gap_within_bound = within_bound(rep.max_gap, rep.bound);
  rep.growth_within_bound = within_bound(rep.max_growth_ratio, 1.0);
  return rep;
}

inline nlohmann::json to_json(const RegularizationReport& r) {
  return {{"n", r.n},
          {"max_overshoot", r.max_overshoot},
          {"max_slope", r.max_slope},
          {"max_gap", r.max_gap},
          {"bound", r.bound},
          {"uniform_bound", r.uniform_bound},
          {"max_growth_ratio", r.max_growth_ratio},
          {"below_sigma", r.below_sigma},
          {"lipschitz", r.lipschitz},
          {"gap_within_bound", r.gap_within_bound},
          {"growth_within_bound", r.growth_within_bound},
          {"pass", r.pass()}};
}

/// sigma_n tabulated on a uniform knot set for time-independent sigma.
///
/// Knot values are the exact inf-convolution over the knots, computed by a
/// forward and a backward sweep; between knots the table interpolates linearly,
/// which keeps the n-Lipschitz property. Outside the table sigma_n_eval is used.
class SigmaTable {
 public:
  SigmaTable() = default;
  SigmaTable(RegularizedSigma reg, double range = 8.0, double spacing = 1e-4) : reg_(std::move(reg)) {
    if (!reg_.base.time_independent) throw std::invalid_argument("SigmaTable requires a time-independent sigma");
    const double margin = reg_.bracket_radius;
    half_ = static_cast<long>(std::ceil((range + margin) / spacing));
    spacing_ = spacing;
    range_ = range;
    values_.resize(static_cast<std::size_t>(2 * half_ + 1));
    for (long k = -half_; k <= half_; ++k) values_[static_cast<std::size_t>(k + half_)] = reg_.base(0.0, k * spacing_);
    if (reg_.base.alpha < 1.0) {
      const double step = reg_.n * spacing_;
      for (std::size_t k = 1; k < values_.size(); ++k) values_[k] = std::min(values_[k], values_[k - 1] + step);
      for (std::size_t k = values_.size() - 1; k-- > 0;) values_[k] = std::min(values_[k], values_[k + 1] + step);
    }
  }

  double operator()(double t, double lambda) const {
    if (!(std::abs(lambda) <= range_)) return sigma_n_eval(reg_, t, lambda);
    const double pos = lambda / spacing_ + static_cast<double>(half_);
    const auto k = static_cast<std::size_t>(std::floor(pos));
    const double w = pos - static_cast<double>(k);
    if (k + 1 >= values_.size()) return values_.back();
    return (1.0 - w) * values_[k] + w * values_[k + 1];
  }

  [[nodiscard]] const RegularizedSigma& regularized() const { return reg_; }

 private:
  RegularizedSigma reg_;
  std::vector<double> values_;
  long half_ = 0;
  double spacing_ = 1e-4;
  double range_ = 0.0;
};

}  // namespace hspde

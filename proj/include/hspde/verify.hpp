#pragma once

// Monte Carlo experiments that turn the energy bounds, the L1 contraction estimate
// and the convergence in n into pass/fail reports.

#include "hspde/evolution.hpp"
#include "hspde/holder_reg.hpp"
#include "hspde/stats.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace hspde {

struct Tolerances {
  double slack = 0.05;           // relative slack on inequality checks
  double se_multiplier = 3.0;    // allowed excess in standard errors
  double uniform_factor = 2.0;   // max/min over n of the energy estimates
};

struct ExperimentPlan {
  Model model;
  SolverConfig base;
  std::vector<int> n_list{4, 8, 16, 32};
  std::size_t num_paths = 64;
  std::uint64_t master_seed = 0;
  Tolerances tol;
  unsigned workers = 1;
  GridFunction u0;

  void validate() const {
    if (num_paths < 2) throw std::invalid_argument("plan.paths must be >= 2, got " + std::to_string(num_paths));
    if (n_list.empty()) throw std::invalid_argument("plan.n_list must not be empty");
    const int lowest = n0(model.sigma.c_sigma);
    for (int n : n_list) {
      if (n < lowest) {
        throw std::invalid_argument("plan.n_list entry " + std::to_string(n) + " is below n0=" + std::to_string(lowest));
      }
    }
    if (!(tol.slack >= 0.0) || !(tol.se_multiplier >= 0.0) || !(tol.uniform_factor >= 1.0)) {
      throw std::invalid_argument("plan tolerances must be non-negative (uniform_factor >= 1)");
    }
    base.validate();
  }

  [[nodiscard]] SolverConfig config_for(int n) const {
    SolverConfig c = base;
    c.n = n;
    c.seed = master_seed;
    c.keep_states = false;
    c.keep_increments = false;
    return c;
  }
};

/// One pass/fail line of a report.
struct Check {
  std::string name;
  std::string property;
  double estimate = 0.0;
  double bound = 0.0;
  double std_error = 0.0;
  bool pass = false;
};

inline nlohmann::json to_json(const Check& c) {
  return {{"name", c.name},         {"property", c.property}, {"estimate", c.estimate},
          {"bound", c.bound},       {"std_error", c.std_error}, {"pass", c.pass}};
}

/// Plot-ready table written next to a report.
struct CsvTable {
  std::string file;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline void write_csv(const CsvTable& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  for (std::size_t i = 0; i < t.header.size(); ++i) out << (i ? "," : "") << t.header[i];
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
}

struct Report {
  std::string name;
  std::vector<Check> checks;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<CsvTable> tables;

  [[nodiscard]] bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }
};

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks) checks.push_back(to_json(c));
  return {{"name", r.name}, {"pass", r.pass()}, {"checks", checks}, {"metadata", r.metadata}};
}

namespace detail {

inline MCEstimate estimate(const std::vector<double>& xs) { return MCEstimate::from_samples(xs); }

inline std::vector<double> paired_difference(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

inline std::string fmt_n(int n) { return "n=" + std::to_string(n); }

}  // namespace detail

// ---- regularization --------------------------------------------------------------

struct RegularizationStudyOptions {
  double alpha = 0.5;
  double l_alpha = 1.0;
  std::vector<int> n_list{2, 4, 8, 16, 32, 64, 128, 256};
  double lambda_range = 4.0;
  int grid_points = 512;
  int slope_grid_points = 10000;
  double rel_tol = 1e-6;
  double slope_tol = 0.05;
  double tight_tol = 1e-4;  // only for alpha = 1/2, where the gap is exactly 1/(4n)
};

/// Gap, Lipschitz and ordering checks of sigma_n for sigma = L |lambda|^alpha over n_list.
inline Report regularization_study(const RegularizationStudyOptions& opt) {
  const HolderSpec s = power_law_sigma(opt.alpha, opt.l_alpha);
  Report rep;
  rep.name = "regularization";
  rep.metadata = {{"alpha", opt.alpha}, {"l_alpha", opt.l_alpha}, {"lambda_range", opt.lambda_range},
                  {"grid_points", opt.grid_points}, {"slope_grid_points", opt.slope_grid_points}};
  CsvTable table{"regularization.csv", {"n", "measured_gap", "gap_bound", "max_slope", "max_overshoot"}, {}};
  std::vector<double> ns, gaps;
  std::vector<double> xs;
  for (int k = 0; k < opt.slope_grid_points; ++k) {
    xs.push_back(-opt.lambda_range + 2.0 * opt.lambda_range * k / (opt.slope_grid_points - 1));
  }
  const std::vector<double> ts{0.0};
  const bool holder = opt.alpha < 1.0;
  for (int n : opt.n_list) {
    const auto reg = make_regularized(s, n, opt.grid_points);
    const auto sup = measure_sup_gap(reg, 0.0, -opt.lambda_range, opt.lambda_range);
    const auto vr = verify_regularization(reg, xs, ts);
    const double bound = holder ? gap_bound(opt.alpha, opt.l_alpha, n) : 0.0;
    ns.push_back(n);
    gaps.push_back(sup.gap);
    table.rows.push_back({static_cast<double>(n), sup.gap, bound, vr.max_slope, vr.max_overshoot});

    rep.checks.push_back({"gap_within_bound " + detail::fmt_n(n), "sup |sigma_n - sigma| <= max_r h_n(r)", sup.gap,
                          bound, 0.0, within_bound(sup.gap, bound, opt.rel_tol)});
    rep.checks.push_back({"lipschitz " + detail::fmt_n(n), "finite-difference slope of sigma_n <= n", vr.max_slope,
                          n * (1.0 + opt.rel_tol), 0.0, vr.max_slope <= n * (1.0 + opt.rel_tol)});
    rep.checks.push_back({"below_sigma " + detail::fmt_n(n), "sigma_n <= sigma", vr.max_overshoot, 0.0, 0.0,
                          vr.max_overshoot <= 1e-9});
    rep.checks.push_back({"growth " + detail::fmt_n(n), "sigma_n^2 <= 2 (C_alpha^2 + C_sigma (1 + lambda^2))",
                          vr.max_growth_ratio, 1.0, 0.0, vr.growth_within_bound});
    if (holder) {
      rep.checks.push_back({"uniform_bound " + detail::fmt_n(n), "gap bound <= C_alpha", bound,
                            c_alpha(opt.alpha, opt.l_alpha), 0.0,
                            within_bound(bound, c_alpha(opt.alpha, opt.l_alpha), opt.rel_tol)});
    }
    if (opt.alpha == 0.5) {
      const double exact = 0.25 * std::pow(opt.l_alpha, 2.0) / n;
      const double rel = std::abs(sup.gap - exact) / exact;
      rep.checks.push_back({"tight_gap " + detail::fmt_n(n), "sup gap of L sqrt|lambda| equals L^2/(4n)", sup.gap,
                            exact, 0.0, rel <= opt.tight_tol});
    }
  }
  if (holder && ns.size() >= 2 && *std::min_element(gaps.begin(), gaps.end()) > 0.0) {
    const double slope = loglog_slope(ns, gaps);
    const double target = opt.alpha / (opt.alpha - 1.0);
    rep.checks.push_back({"gap_decay_slope", "log-log slope of the gap in n equals alpha/(alpha-1)", slope, target, 0.0,
                          std::abs(slope - target) <= opt.slope_tol});
  }
  rep.tables.push_back(std::move(table));
  return rep;
}

// ---- energy bounds ----------------------------------------------------------------

struct PathEnergy {
  double sup_l2_sq = 0.0;
  double int_grad_lp_p = 0.0;
  double hm0_weighted = 0.0;  // (1/n) int ||u||_{H^m}^2
  double wmq_weighted = 0.0;  // (1/n) int ||u||_{W^{m,q}}^q
};

/// E sup ||u_n||^2, E int ||grad u_n||_p^p and the (1/n)-weighted perturbation energies for each n.
inline Report energy_report(const ExperimentPlan& plan) {
  plan.validate();
  Report rep;
  rep.name = "energy";
  rep.metadata = {{"paths", plan.num_paths}, {"master_seed", plan.master_seed}, {"n_list", plan.n_list}};
  CsvTable table{"energy.csv",
                 {"n", "sup_l2_sq", "sup_l2_sq_se", "int_grad_lp_p", "int_grad_lp_p_se", "hm0_weighted",
                  "hm0_weighted_se", "wmq_weighted", "wmq_weighted_se"},
                 {}};
  std::vector<std::vector<double>> sup_by_n, wmq_by_n;
  std::vector<MCEstimate> sup_est;
  for (int n : plan.n_list) {
    const Integrator integ(plan.model, plan.config_for(n));
    const auto paths = parallel_map<PathEnergy>(plan.num_paths, plan.workers, [&](std::size_t i) {
      auto sampler = integ.make_sampler(i);
      const auto r = simulate_path(integ, plan.u0, sampler);
      return PathEnergy{r.sup_l2_sq, r.int_grad_lp_p, r.int_hm0_sq / n, r.int_wmq_q / n};
    });
    std::vector<double> sup, grad, hm, wq;
    for (const auto& p : paths) {
      sup.push_back(p.sup_l2_sq);
      grad.push_back(p.int_grad_lp_p);
      hm.push_back(p.hm0_weighted);
      wq.push_back(p.wmq_weighted);
    }
    const auto es = detail::estimate(sup), eg = detail::estimate(grad), eh = detail::estimate(hm),
               ew = detail::estimate(wq);
    table.rows.push_back({static_cast<double>(n), es.mean, es.std_error, eg.mean, eg.std_error, eh.mean, eh.std_error,
                          ew.mean, ew.std_error});
    const bool finite = std::isfinite(es.mean) && std::isfinite(eg.mean) && std::isfinite(eh.mean) &&
                        std::isfinite(ew.mean) && std::isfinite(es.std_error) && std::isfinite(ew.std_error);
    rep.checks.push_back({"finite " + detail::fmt_n(n), "all energy estimates finite", es.mean,
                          std::numeric_limits<double>::max(), es.std_error, finite});
    sup_est.push_back(es);
    sup_by_n.push_back(std::move(sup));
    wmq_by_n.push_back(std::move(wq));
  }
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& e : sup_est) {
    lo = std::min(lo, e.mean);
    hi = std::max(hi, e.mean);
  }
  const double ratio = hi == 0.0 ? 1.0 : (lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity());
  rep.checks.push_back({"uniform_sup_l2", "max/min over n of E sup_t ||u_n||_2^2", ratio, plan.tol.uniform_factor, 0.0,
                        ratio <= plan.tol.uniform_factor});
  for (std::size_t k = 0; k + 1 < plan.n_list.size(); ++k) {
    // paired over common seeds: later level may exceed the earlier one by at most se_multiplier SE
    const auto d = detail::estimate(detail::paired_difference(wmq_by_n[k + 1], wmq_by_n[k]));
    rep.checks.push_back({"wmq_nonincreasing " + detail::fmt_n(plan.n_list[k]) + "->" +
                              detail::fmt_n(plan.n_list[k + 1]),
                          "(1/n) E int ||u_n||_{W^{m,q}}^q non-increasing in n (paired difference)", d.mean,
                          plan.tol.se_multiplier * d.std_error, d.std_error,
                          d.mean <= plan.tol.se_multiplier * d.std_error});
  }
  rep.tables.push_back(std::move(table));
  return rep;
}

// ---- L1 contraction --------------------------------------------------------------

struct ContractionOptions {
  int checkpoints = 10;
  bool coupling_sanity = true;  // identical initial data must give exactly zero difference
};

/// E ||u_1(t) - u_2(t)||_1 against exp(L_f t) E ||u_1(0) - u_2(0)||_1 on coupled paths.
/// Uses the first entry of n_list as the regularization level.
inline Report contraction_experiment(const ExperimentPlan& plan, const GridFunction& u0_a, const GridFunction& u0_b,
                                     const ContractionOptions& opt = {}) {
  plan.validate();
  if (plan.model.sigma.alpha < 0.5) {
    throw std::invalid_argument("contraction needs sigma.alpha >= 1/2, got " + std::to_string(plan.model.sigma.alpha));
  }
  if (opt.checkpoints < 1) throw std::invalid_argument("contraction needs at least one checkpoint");
  const int n = plan.n_list.front();
  const Integrator integ(plan.model, plan.config_for(n));
  const long steps = integ.config().num_steps();
  if (steps % opt.checkpoints != 0) {
    throw std::invalid_argument("number of steps must be a multiple of the checkpoint count");
  }
  const long stride = steps / opt.checkpoints;
  const double l_f = plan.model.drift.l_f;

  const auto paths = parallel_map<std::vector<double>>(plan.num_paths, plan.workers, [&](std::size_t i) {
    auto sampler = integ.make_sampler(i);
    const auto res = simulate_coupled_pair(integ, u0_a, u0_b, sampler);
    std::vector<double> at;
    for (int c = 0; c <= opt.checkpoints; ++c) at.push_back(res.diff.l1[static_cast<std::size_t>(c * stride)]);
    return at;
  });

  Report rep;
  rep.name = "contraction";
  rep.metadata = {{"paths", plan.num_paths},
                  {"master_seed", plan.master_seed},
                  {"n", n},
                  {"l_f", l_f},
                  {"alpha", plan.model.sigma.alpha},
                  {"bound_form", "exp(L_f t) E||u_1(0) - u_2(0)||_1 at each checkpoint t (pointwise in t)"}};
  CsvTable table{"contraction.csv", {"t", "mean_l1_diff", "std_error", "bound"}, {}};
  const double dt = integ.config().dt;
  std::vector<double> init;
  for (const auto& p : paths) init.push_back(p[0]);
  const double initial = detail::estimate(init).mean;
  for (int c = 0; c <= opt.checkpoints; ++c) {
    std::vector<double> xs;
    for (const auto& p : paths) xs.push_back(p[static_cast<std::size_t>(c)]);
    const auto e = detail::estimate(xs);
    const double t = c * stride * dt;
    const double bound = std::exp(l_f * t) * initial;
    table.rows.push_back({t, e.mean, e.std_error, bound});
    if (c == 0) continue;
    const double allowed = bound * (1.0 + plan.tol.slack) + plan.tol.se_multiplier * e.std_error;
    char label[64];
    std::snprintf(label, sizeof label, "l1_contraction t=%.4g", t);
    rep.checks.push_back({label, "E||u_1(t)-u_2(t)||_1 <= exp(L_f t) E||u_1(0)-u_2(0)||_1", e.mean, allowed,
                          e.std_error, e.mean <= allowed});
  }
  if (opt.coupling_sanity) {
    auto sampler = integ.make_sampler(0);
    const auto same = simulate_coupled_pair(integ, u0_a, u0_a, sampler);
    const double worst = *std::max_element(same.diff.l1.begin(), same.diff.l1.end());
    rep.checks.push_back({"coupling_sanity", "identical initial data give zero difference on a common path", worst,
                          0.0, 0.0, worst == 0.0});
  }
  rep.tables.push_back(std::move(table));
  return rep;
}

// ---- Cauchy property in n --------------------------------------------------------

/// D_n = E ||u_n - u_{2n}||_{L2((0,T) x D)} for each n in n_list, all levels on common increments.
inline Report cauchy_in_n_study(const ExperimentPlan& plan) {
  plan.validate();
  for (std::size_t k = 0; k + 1 < plan.n_list.size(); ++k) {
    if (plan.n_list[k + 1] != 2 * plan.n_list[k]) throw std::invalid_argument("plan.n_list must double at each entry");
  }
  Report rep;
  rep.name = "cauchy";
  rep.metadata = {{"paths", plan.num_paths}, {"master_seed", plan.master_seed}, {"n_list", plan.n_list}};
  CsvTable table{"cauchy.csv", {"n", "d_n", "std_error"}, {}};
  if (plan.n_list.size() < 2) {
    rep.tables.push_back(std::move(table));
    return rep;
  }
  // levels n_1, ..., n_K and the partner 2 n_K of the last one
  std::vector<int> levels = plan.n_list;
  levels.push_back(2 * plan.n_list.back());
  std::vector<Integrator> integs;
  integs.reserve(levels.size());
  for (int n : levels) integs.emplace_back(plan.model, plan.config_for(n));
  std::vector<const Integrator*> ptrs;
  for (const auto& i : integs) ptrs.push_back(&i);

  const auto paths = parallel_map<std::vector<double>>(plan.num_paths, plan.workers, [&](std::size_t i) {
    auto sampler = integs.front().make_sampler(i);
    const auto diffs = simulate_levels(ptrs, plan.u0, sampler);
    std::vector<double> d;
    for (const auto& x : diffs) d.push_back(std::sqrt(x.int_l2_sq));
    return d;
  });
  std::vector<std::vector<double>> by_level(plan.n_list.size());
  for (const auto& p : paths) {
    for (std::size_t k = 0; k < by_level.size(); ++k) by_level[k].push_back(p[k]);
  }
  for (std::size_t k = 0; k < by_level.size(); ++k) {
    const auto e = detail::estimate(by_level[k]);
    table.rows.push_back({static_cast<double>(plan.n_list[k]), e.mean, e.std_error});
  }
  for (std::size_t k = 0; k + 1 < by_level.size(); ++k) {
    const auto d = detail::estimate(detail::paired_difference(by_level[k + 1], by_level[k]));
    rep.checks.push_back({"cauchy_nonincreasing " + detail::fmt_n(plan.n_list[k]) + "->" +
                              detail::fmt_n(plan.n_list[k + 1]),
                          "E||u_n - u_2n||_{L2((0,T) x D)} non-increasing in n (paired difference)", d.mean,
                          plan.tol.se_multiplier * d.std_error, d.std_error,
                          d.mean <= plan.tol.se_multiplier * d.std_error});
  }
  rep.tables.push_back(std::move(table));
  return rep;
}

// ---- heat oracle -----------------------------------------------------------------

struct HeatOracleOptions {
  int n_interior = 128;
  double dt = 1e-5;
  double t_end = 0.1;
  double error_tol = 1e-3;
  std::vector<int> richardson_n{7, 15, 31};
  double richardson_slope = 2.0;
  double richardson_tol = 0.3;
};

/// p = 2, no noise, no drift, no perturbation: compare with exp(-pi^2 T) sin(pi x).
inline double heat_error(int n_interior, double dt, double t_end) {
  Model m;
  m.grid = Grid(1, n_interior);
  m.m = 1;
  m.coeff = p_laplacian(2.0);
  m.sigma = zero_sigma();
  m.kernel = constant_kernel(m.grid, 0.0);
  SolverConfig c;
  c.n = 1;
  c.dt = dt;
  c.t_end = t_end;
  c.perturbation = false;
  c.keep_states = false;
  c.newton_tol = 1e-12;
  const Integrator integ(m, c);
  auto sampler = integ.make_sampler(0);
  const auto rec = simulate_path(integ, sine_profile(m.grid), sampler);
  const auto exact = sine_profile(m.grid, std::exp(-std::numbers::pi * std::numbers::pi * t_end));
  const auto err = rec.final_state - exact;
  return std::sqrt(inner(err, err));
}

inline Report heat_oracle_study(const HeatOracleOptions& opt) {
  Report rep;
  rep.name = "heat_oracle";
  rep.metadata = {{"n_interior", opt.n_interior}, {"dt", opt.dt}, {"t_end", opt.t_end},
                  {"richardson_n", opt.richardson_n}};
  const double err = heat_error(opt.n_interior, opt.dt, opt.t_end);
  rep.checks.push_back({"l2_error", "L2 error against exp(-pi^2 T) sin(pi x)", err, opt.error_tol, 0.0,
                        err <= opt.error_tol});
  CsvTable table{"heat_richardson.csv", {"n_interior", "h", "l2_error"}, {}};
  std::vector<double> hs, errs;
  for (int n : opt.richardson_n) {
    const double e = heat_error(n, opt.dt, opt.t_end);
    hs.push_back(1.0 / (n + 1));
    errs.push_back(e);
    table.rows.push_back({static_cast<double>(n), 1.0 / (n + 1), e});
  }
  if (hs.size() >= 2) {
    const double slope = loglog_slope(hs, errs);
    rep.checks.push_back({"spatial_order", "log-log slope of the L2 error in h", slope, opt.richardson_slope, 0.0,
                          std::abs(slope - opt.richardson_slope) <= opt.richardson_tol});
  }
  rep.tables.push_back(std::move(table));
  return rep;
}

}  // namespace hspde

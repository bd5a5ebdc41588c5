#pragma once

// Time stepping of  du + A_n(u) dt = B_n(t, u) dW  along sampled Wiener paths.
//
// Both schemes evaluate the noise at the left endpoint (Ito form). The explicit
// scheme is Euler-Maruyama; the semi-implicit scheme treats A_n implicitly and
// solves  v + dt A_n(v) = u + B_n(t, u) dW  by damped Newton.

#include "hspde/grid.hpp"
#include "hspde/holder_reg.hpp"
#include "hspde/newton.hpp"
#include "hspde/noise.hpp"
#include "hspde/spatial.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hspde {

enum class Scheme { explicit_euler, semi_implicit };

inline std::string to_string(Scheme s) { return s == Scheme::explicit_euler ? "explicit" : "semi_implicit"; }

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "explicit") return Scheme::explicit_euler;
  if (s == "semi_implicit" || s == "semi-implicit") return Scheme::semi_implicit;
  throw std::invalid_argument("solver.scheme must be 'explicit' or 'semi_implicit', got '" + s + "'");
}

struct SolverConfig {
  int n = 4;                 // regularization index
  double dt = 1e-3;
  double t_end = 0.5;
  Scheme scheme = Scheme::semi_implicit;
  double newton_tol = 1e-10;
  int newton_max_iter = 100;
  std::uint64_t seed = 0;
  int record_every = 1;
  bool perturbation = true;  // include (1/n) j(u, .)
  bool raw_sigma = false;    // drive with sigma instead of sigma_n
  bool tabulate_sigma = true;
  int sigma_grid_points = 4096;
  int max_dt_halvings = 4;
  double blowup_threshold = 1e12;
  bool keep_states = true;
  bool keep_increments = false;

  /// Number of steps K with K dt = t_end; rejects horizons that are not a multiple of dt.
  [[nodiscard]] long num_steps() const {
    if (!(dt > 0.0)) throw std::invalid_argument("solver.dt must be positive");
    if (!(t_end >= 0.0)) throw std::invalid_argument("solver.t_end must be non-negative");
    const double k = std::round(t_end / dt);
    if (std::abs(k * dt - t_end) > 1e-9 * std::max(1.0, t_end)) {
      throw std::invalid_argument("solver.t_end must be an integer multiple of solver.dt");
    }
    return static_cast<long>(k);
  }

  void validate() const {
    (void)num_steps();
    if (n < 1) throw std::invalid_argument("solver.n must be >= 1");
    if (!(newton_tol > 0.0)) throw std::invalid_argument("solver.newton_tol must be positive");
    if (newton_max_iter < 1) throw std::invalid_argument("solver.newton_max_iter must be >= 1");
    if (record_every < 1) throw std::invalid_argument("solver.record_every must be >= 1");
    if (max_dt_halvings < 0) throw std::invalid_argument("solver.max_dt_halvings must be >= 0");
  }
};

/// Everything about the equation that does not depend on n or on the path.
struct Model {
  Grid grid{1, 31};
  int m = 2;
  LerayLionsCoeff coeff = p_laplacian(2.0);
  DriftSpec drift = zero_drift();
  HolderSpec sigma = zero_sigma();
  Kernel kernel;
  int num_modes = 0;  // Q-Wiener truncation, 0 = all grid modes
};

/// Abort of a path because the state left the finite range.
struct BlowUp : std::runtime_error {
  long step;
  double time;
  BlowUp(const std::string& what, long step_index, double t) : std::runtime_error(what), step(step_index), time(t) {}
};

struct EnergySample {
  double l2_sq = 0.0;      // ||u||_2^2
  double grad_lp_p = 0.0;  // ||grad u||_p^p
  double hm0_sq = 0.0;     // ||u||_{H^m_0}^2
  double wmq_q = 0.0;      // ||u||_{W^{m,q}_0}^q
};

/// Per-step decomposition of ||u^{k+1}||^2 - ||u^k||^2 = drift + martingale + quadratic.
struct EnergyLedger {
  double drift = 0.0;       // 2 <u^{k+1} - u^k - xi, u^k>
  double martingale = 0.0;  // 2 <xi, u^k>, xi = B(t_k, u^k) dW_k
  double quadratic = 0.0;   // ||u^{k+1} - u^k||^2
  [[nodiscard]] double total() const { return drift + martingale + quadratic; }
};

struct TrajectoryRecord {
  std::vector<double> times;
  std::vector<GridFunction> states;
  std::vector<EnergySample> energies;
  std::vector<int> newton_iters;  // iterations of the step that produced each record (0 for the initial one)
  // left-endpoint time integrals over [0, T]
  double int_l2_sq = 0.0;
  double int_grad_lp_p = 0.0;
  double int_hm0_sq = 0.0;
  double int_wmq_q = 0.0;
  double sup_l2_sq = 0.0;
  EnergyLedger ledger;
  double initial_l2_sq = 0.0;
  double final_l2_sq = 0.0;
  long steps = 0;
  long total_newton_iters = 0;
  int dt_halvings = 0;
  double max_newton_residual = 0.0;
  GridFunction final_state;
  std::vector<GridFunction> increments;
};

struct StepOutcome {
  GridFunction state;
  int newton_iters = 0;
  double residual = 0.0;
  int halvings = 0;
};

/// One regularization level n of a model: discretization, A_n and B_n.
/// Immutable after construction, so one instance serves all path workers.
class Integrator {
 public:
  Integrator(const Model& model, const SolverConfig& cfg)
      : model_(model), cfg_(cfg), disc_(model.grid, model.m), q_(q_of_p(model.coeff.p)) {
    cfg_.validate();
    model_.coeff.validate(model.grid.dimension());
    if (cfg_.perturbation) pert_ = make_perturbation(model.coeff.p, cfg_.n, model.m);
    GridFunction::require_same_grid(model.grid, model.kernel.grid);
    if (cfg_.raw_sigma) {
      if (cfg_.n < n0(model.sigma.c_sigma)) {
        throw std::invalid_argument("solver.n=" + std::to_string(cfg_.n) + " is below n0=" +
                                    std::to_string(n0(model.sigma.c_sigma)));
      }
      noise_ = NoiseOperator::from_holder(model.sigma, model.kernel);
    } else {
      const auto reg = make_regularized(model.sigma, cfg_.n, cfg_.sigma_grid_points);
      noise_ = NoiseOperator::from_regularized(reg, model.kernel, cfg_.tabulate_sigma);
    }
  }

  [[nodiscard]] const Model& model() const { return model_; }
  [[nodiscard]] const SolverConfig& config() const { return cfg_; }
  [[nodiscard]] const Discretization& discretization() const { return disc_; }
  [[nodiscard]] const NoiseOperator& noise() const { return noise_; }
  [[nodiscard]] const std::optional<HigherOrderPerturbation>& perturbation() const { return pert_; }
  [[nodiscard]] double q() const { return q_; }

  [[nodiscard]] QWienerSampler make_sampler(std::uint64_t path_index) const {
    return QWienerSampler::sine(model_.grid, cfg_.seed, path_index, model_.num_modes);
  }

  [[nodiscard]] GridFunction apply_A(const GridFunction& u) const {
    return apply_A_n(disc_, model_.coeff, model_.drift, pert_, u);
  }

  /// xi = sigma_n(t, u(x)) (K dW)(x).
  [[nodiscard]] GridFunction noise_term(double t, const GridFunction& u, const GridFunction& dw) const {
    if (noise_.is_zero()) return GridFunction(u.grid);
    return apply_B(noise_, t, u, dw);
  }

  /// u - dt A_n(u) + xi.
  [[nodiscard]] GridFunction step_explicit(const GridFunction& u, double t, const GridFunction& dw) const {
    return explicit_step(u, noise_term(t, u, dw));
  }

  /// Solves v + dt A_n(v) = u + xi by damped Newton.
  [[nodiscard]] StepOutcome step_semi_implicit(const GridFunction& u, double t, const GridFunction& dw) const {
    return implicit_step(u, noise_term(t, u, dw));
  }

  [[nodiscard]] StepOutcome step(const GridFunction& u, double t, const GridFunction& dw) const {
    return step_given_noise(u, noise_term(t, u, dw));
  }

  /// One step of the configured scheme with the noise term xi already evaluated.
  [[nodiscard]] StepOutcome step_given_noise(const GridFunction& u, const GridFunction& xi) const {
    if (cfg_.scheme == Scheme::semi_implicit) return implicit_step(u, xi);
    return {explicit_step(u, xi), 0, 0.0, 0};
  }

  [[nodiscard]] EnergySample energy(const GridFunction& u) const {
    const Norms nm = norms(disc_, u, model_.coeff.p, q_);
    return {nm.l2 * nm.l2, std::pow(nm.w1p_seminorm, model_.coeff.p), nm.hm0 * nm.hm0, std::pow(nm.wmq, q_)};
  }

 private:
  [[nodiscard]] GridFunction explicit_step(const GridFunction& u, const GridFunction& xi) const {
    GridFunction next = u;
    next.values -= cfg_.dt * apply_A(u).values;
    next.values += xi.values;
    return next;
  }

  // On Newton failure the implicit part is split into 2, 4, ... sub-solves of the
  // same total length, up to max_dt_halvings times. The noise term is not split.
  [[nodiscard]] StepOutcome implicit_step(const GridFunction& u, const GridFunction& xi) const {
    GridFunction rhs = u;
    rhs.values += xi.values;
    for (int halvings = 0;; ++halvings) {
      try {
        StepOutcome out;
        out.state = rhs;
        const int pieces = 1 << halvings;
        const double h = cfg_.dt / pieces;
        for (int k = 0; k < pieces; ++k) {
          const auto r = implicit_solve(out.state, h);
          out.state.values = r.x;
          out.newton_iters += r.iterations;
          out.residual = std::max(out.residual, r.residual);
        }
        out.halvings = halvings;
        return out;
      } catch (const NewtonDiverged&) {
        if (halvings >= cfg_.max_dt_halvings) throw;
      }
    }
  }

  // v + dt A(v) = rhs, started from rhs.
  [[nodiscard]] NewtonResult implicit_solve(const GridFunction& rhs, double dt) const {
    const Grid& g = rhs.grid;
    NewtonOptions opt;
    opt.tol = cfg_.newton_tol;
    opt.max_iter = cfg_.newton_max_iter;
    opt.weight = g.cell_volume();
    auto residual = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      const GridFunction gv(g, v);
      return v + dt * apply_A(gv).values - rhs.values;
    };
    auto jacobian = [&](const Eigen::VectorXd& v) -> SparseMatrix {
      const GridFunction gv(g, v);
      SparseMatrix jac = dt * jacobian_A_n(disc_, model_.coeff, model_.drift, pert_, gv);
      SparseMatrix id(jac.rows(), jac.cols());
      id.setIdentity();
      return id + jac;
    };
    return damped_newton(residual, jacobian, rhs.values, opt);
  }

  Model model_;
  SolverConfig cfg_;
  Discretization disc_;
  double q_;
  std::optional<HigherOrderPerturbation> pert_;
  NoiseOperator noise_;
};

namespace detail {

inline void check_state(const GridFunction& u, double threshold, long step, double t) {
  if (!u.all_finite()) {
    throw BlowUp("non-finite state at step " + std::to_string(step) + " (t=" + std::to_string(t) + ")", step, t);
  }
  const double l2 = std::sqrt(inner(u, u));
  if (l2 > threshold) {
    throw BlowUp("state norm " + std::to_string(l2) + " exceeds blow-up threshold at step " + std::to_string(step) +
                     " (t=" + std::to_string(t) + ")",
                 step, t);
  }
}

/// Accumulates one trajectory's record step by step.
class Recorder {
 public:
  Recorder(const Integrator& integ, const GridFunction& u0) : integ_(integ) {
    rec_.initial_l2_sq = inner(u0, u0);
    record(0.0, u0, 0);
    current_ = integ.energy(u0);
    rec_.sup_l2_sq = current_.l2_sq;
  }

  void advance(long k, double t_next, const GridFunction& prev, const GridFunction& next, const GridFunction& xi,
               const StepOutcome& out) {
    const double dt = integ_.config().dt;
    // left-endpoint quadrature of the time integrals
    rec_.int_l2_sq += dt * current_.l2_sq;
    rec_.int_grad_lp_p += dt * current_.grad_lp_p;
    rec_.int_hm0_sq += dt * current_.hm0_sq;
    rec_.int_wmq_q += dt * current_.wmq_q;

    const Eigen::VectorXd inc = next.values - prev.values;
    const double w = prev.grid.cell_volume();
    rec_.ledger.drift += 2.0 * w * (inc - xi.values).dot(prev.values);
    rec_.ledger.martingale += 2.0 * w * xi.values.dot(prev.values);
    rec_.ledger.quadratic += w * inc.squaredNorm();

    current_ = integ_.energy(next);
    rec_.sup_l2_sq = std::max(rec_.sup_l2_sq, current_.l2_sq);
    rec_.total_newton_iters += out.newton_iters;
    rec_.dt_halvings += out.halvings;
    rec_.max_newton_residual = std::max(rec_.max_newton_residual, out.residual);
    rec_.steps = k + 1;
    iters_since_record_ += out.newton_iters;
    if ((k + 1) % integ_.config().record_every == 0) record(t_next, next, iters_since_record_);
  }

  TrajectoryRecord finish(const GridFunction& final_state) {
    rec_.final_l2_sq = inner(final_state, final_state);
    rec_.final_state = final_state;
    if (rec_.steps > 0 && rec_.steps % integ_.config().record_every != 0) {
      record(integ_.config().t_end, final_state, iters_since_record_);
    }
    return std::move(rec_);
  }

  TrajectoryRecord& record_ref() { return rec_; }

 private:
  void record(double t, const GridFunction& u, int iters) {
    rec_.times.push_back(t);
    rec_.energies.push_back(integ_.energy(u));
    rec_.newton_iters.push_back(iters);
    if (integ_.config().keep_states) rec_.states.push_back(u);
    iters_since_record_ = 0;
  }

  const Integrator& integ_;
  TrajectoryRecord rec_;
  EnergySample current_;
  int iters_since_record_ = 0;
};

}  // namespace detail

/// Integrates one path from u0 over [0, T].
inline TrajectoryRecord simulate_path(const Integrator& integ, const GridFunction& u0, QWienerSampler& sampler) {
  GridFunction::require_same_grid(integ.model().grid, u0.grid);
  if (!u0.all_finite()) throw std::invalid_argument("initial state has non-finite values");
  const auto& cfg = integ.config();
  const long steps = cfg.num_steps();
  detail::Recorder rec(integ, u0);
  GridFunction u = u0;
  for (long k = 0; k < steps; ++k) {
    const double t = k * cfg.dt;
    const GridFunction dw = sampler.sample_increment(cfg.dt);
    const GridFunction xi = integ.noise_term(t, u, dw);
    StepOutcome out;
    try {
      out = integ.step_given_noise(u, xi);
    } catch (const NewtonDiverged& e) {
      throw NewtonDiverged("step " + std::to_string(k) + " (t=" + std::to_string(t) + "): " + e.what(),
                           e.last_residual, e.iterations);
    } catch (const std::domain_error& e) {
      throw BlowUp(std::string("step ") + std::to_string(k) + ": " + e.what(), k, t);
    }
    detail::check_state(out.state, cfg.blowup_threshold, k, t + cfg.dt);
    rec.advance(k, (k + 1) * cfg.dt, u, out.state, xi, out);
    if (cfg.keep_increments) rec.record_ref().increments.push_back(dw);
    u = std::move(out.state);
  }
  return rec.finish(u);
}

/// Difference series of two coupled trajectories, evaluated every step.
struct CoupledDifference {
  std::vector<double> times;
  std::vector<double> l1;      // ||u_a - u_b||_1
  std::vector<double> l2_sq;   // ||u_a - u_b||_2^2
  double int_l2_sq = 0.0;      // left-endpoint integral of ||u_a - u_b||_2^2 over [0, T]
};

struct CoupledResult {
  TrajectoryRecord a;
  TrajectoryRecord b;
  CoupledDifference diff;
};

/// Two trajectories driven by one sampler: every increment is drawn once and fed to both.
/// The integrators may differ (e.g. in n) but must share the grid.
inline CoupledResult simulate_coupled(const Integrator& ia, const Integrator& ib, const GridFunction& u0_a,
                                      const GridFunction& u0_b, QWienerSampler& sampler) {
  GridFunction::require_same_grid(u0_a.grid, u0_b.grid);
  GridFunction::require_same_grid(ia.model().grid, u0_a.grid);
  GridFunction::require_same_grid(ib.model().grid, u0_b.grid);
  if (ia.config().dt != ib.config().dt || ia.config().t_end != ib.config().t_end) {
    throw std::invalid_argument("coupled runs need identical time grids");
  }
  const auto& cfg = ia.config();
  const long steps = cfg.num_steps();
  detail::Recorder ra(ia, u0_a), rb(ib, u0_b);
  CoupledResult res;
  auto push_diff = [&](double t, const GridFunction& a, const GridFunction& b) {
    const Eigen::VectorXd d = a.values - b.values;
    const double w = a.grid.cell_volume();
    res.diff.times.push_back(t);
    res.diff.l1.push_back(w * d.cwiseAbs().sum());
    res.diff.l2_sq.push_back(w * d.squaredNorm());
  };
  GridFunction ua = u0_a, ub = u0_b;
  push_diff(0.0, ua, ub);
  for (long k = 0; k < steps; ++k) {
    const double t = k * cfg.dt;
    const GridFunction dw = sampler.sample_increment(cfg.dt);
    res.diff.int_l2_sq += cfg.dt * res.diff.l2_sq.back();
    const GridFunction xa = ia.noise_term(t, ua, dw);
    const GridFunction xb = ib.noise_term(t, ub, dw);
    StepOutcome oa, ob;
    try {
      oa = ia.step_given_noise(ua, xa);
      ob = ib.step_given_noise(ub, xb);
    } catch (const std::domain_error& e) {
      throw BlowUp(std::string("step ") + std::to_string(k) + ": " + e.what(), k, t);
    }
    detail::check_state(oa.state, cfg.blowup_threshold, k, t + cfg.dt);
    detail::check_state(ob.state, ib.config().blowup_threshold, k, t + cfg.dt);
    ra.advance(k, (k + 1) * cfg.dt, ua, oa.state, xa, oa);
    rb.advance(k, (k + 1) * cfg.dt, ub, ob.state, xb, ob);
    if (cfg.keep_increments) ra.record_ref().increments.push_back(dw);
    if (ib.config().keep_increments) rb.record_ref().increments.push_back(dw);
    ua = std::move(oa.state);
    ub = std::move(ob.state);
    push_diff((k + 1) * cfg.dt, ua, ub);
  }
  res.a = ra.finish(ua);
  res.b = rb.finish(ub);
  return res;
}

/// Same model, two initial states, one Wiener path.
inline CoupledResult simulate_coupled_pair(const Integrator& integ, const GridFunction& u0_a, const GridFunction& u0_b,
                                           QWienerSampler& sampler) {
  return simulate_coupled(integ, integ, u0_a, u0_b, sampler);
}

/// Several levels (e.g. n, 2n, 4n, ...) from one initial state along one Wiener path.
/// Returns the difference series of each consecutive pair (level k vs level k+1).
inline std::vector<CoupledDifference> simulate_levels(const std::vector<const Integrator*>& levels,
                                                      const GridFunction& u0, QWienerSampler& sampler) {
  if (levels.size() < 2) return {};
  const auto& cfg = levels.front()->config();
  for (const auto* l : levels) {
    GridFunction::require_same_grid(l->model().grid, u0.grid);
    if (l->config().dt != cfg.dt || l->config().t_end != cfg.t_end) {
      throw std::invalid_argument("coupled runs need identical time grids");
    }
  }
  const long steps = cfg.num_steps();
  std::vector<GridFunction> u(levels.size(), u0);
  std::vector<CoupledDifference> diffs(levels.size() - 1);
  auto push = [&](double t) {
    for (std::size_t k = 0; k + 1 < u.size(); ++k) {
      const Eigen::VectorXd d = u[k].values - u[k + 1].values;
      const double w = u0.grid.cell_volume();
      diffs[k].times.push_back(t);
      diffs[k].l1.push_back(w * d.cwiseAbs().sum());
      diffs[k].l2_sq.push_back(w * d.squaredNorm());
    }
  };
  push(0.0);
  for (long s = 0; s < steps; ++s) {
    const double t = s * cfg.dt;
    const GridFunction dw = sampler.sample_increment(cfg.dt);
    for (auto& d : diffs) d.int_l2_sq += cfg.dt * d.l2_sq.back();
    for (std::size_t k = 0; k < levels.size(); ++k) {
      StepOutcome out;
      try {
        out = levels[k]->step(u[k], t, dw);
      } catch (const std::domain_error& e) {
        throw BlowUp(std::string("step ") + std::to_string(s) + ": " + e.what(), s, t);
      }
      detail::check_state(out.state, levels[k]->config().blowup_threshold, s, t + cfg.dt);
      u[k] = std::move(out.state);
    }
    push((s + 1) * cfg.dt);
  }
  return diffs;
}

/// Runs fn(i) for i in [0, count) on `workers` threads and returns results in index
/// order. The first exception (lowest index) is rethrown after all workers finish.
template <class Result, class Fn>
std::vector<Result> parallel_map(std::size_t count, unsigned workers, Fn&& fn) {
  std::vector<std::optional<Result>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<Result> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline unsigned default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---- CSV output ---------------------------------------------------------------

inline void write_energy_csv(const TrajectoryRecord& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "t,l2_sq,grad_lp_p,hm0_sq,wmq_q,newton_iters\n";
  for (std::size_t i = 0; i < r.times.size(); ++i) {
    const auto& e = r.energies[i];
    out << r.times[i] << ',' << e.l2_sq << ',' << e.grad_lp_p << ',' << e.hm0_sq << ',' << e.wmq_q << ','
        << r.newton_iters[i] << '\n';
  }
}

/// One snapshot per line: t followed by the interior values.
inline void write_states_csv(const TrajectoryRecord& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  for (std::size_t i = 0; i < r.states.size(); ++i) {
    out << r.times[i];
    for (Eigen::Index k = 0; k < r.states[i].values.size(); ++k) out << ',' << r.states[i].values[k];
    out << '\n';
  }
}

}  // namespace hspde

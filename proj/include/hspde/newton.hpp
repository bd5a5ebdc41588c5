#pragma once

// Damped Newton iteration with Armijo backtracking on the residual norm.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace hspde {

struct NewtonDiverged : std::runtime_error {
  double last_residual;
  int iterations;
  NewtonDiverged(const std::string& what, double residual, int iters)
      : std::runtime_error(what), last_residual(residual), iterations(iters) {}
};

struct NewtonOptions {
  double tol = 1e-10;
  int max_iter = 100;
  double backtrack = 0.5;
  double min_step = 0x1.0p-20;
  double armijo = 1e-4;
  /// Residual norm is sqrt(weight) * ||F||_2, e.g. weight = h^d for the discrete L2 norm.
  double weight = 1.0;
};

struct NewtonResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double residual = 0.0;
};

/// Solves F(x) = 0 from x0. `residual(x)` returns F(x), `jacobian(x)` a sparse dF/dx.
template <class Residual, class Jacobian>
NewtonResult damped_newton(Residual&& residual, Jacobian&& jacobian, Eigen::VectorXd x0, const NewtonOptions& opt) {
  const double scale = std::sqrt(opt.weight);
  NewtonResult r;
  r.x = std::move(x0);
  Eigen::VectorXd f = residual(r.x);
  r.residual = scale * f.norm();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  while (r.residual > opt.tol) {
    if (r.iterations >= opt.max_iter) {
      throw NewtonDiverged("Newton hit the iteration cap with residual " + std::to_string(r.residual), r.residual,
                           r.iterations);
    }
    Eigen::SparseMatrix<double> jac = jacobian(r.x);
    jac.makeCompressed();
    lu.compute(jac);
    if (lu.info() != Eigen::Success) throw NewtonDiverged("singular Newton Jacobian", r.residual, r.iterations);
    const Eigen::VectorXd delta = lu.solve(-f);
    double step = 1.0;
    while (true) {
      Eigen::VectorXd trial = r.x + step * delta;
      Eigen::VectorXd ft;
      double rt = std::numeric_limits<double>::infinity();
      try {
        ft = residual(trial);
        rt = scale * ft.norm();
      } catch (const std::domain_error&) {
        // overflow in a trial point counts as a rejected step
      }
      if (std::isfinite(rt) && rt <= (1.0 - opt.armijo * step) * r.residual) {
        r.x = std::move(trial);
        f = std::move(ft);
        r.residual = rt;
        break;
      }
      step *= opt.backtrack;
      if (step < opt.min_step) {
        throw NewtonDiverged("line search failed with residual " + std::to_string(r.residual), r.residual,
                             r.iterations);
      }
    }
    ++r.iterations;
  }
  return r;
}

}  // namespace hspde

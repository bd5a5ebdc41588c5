#include "hspde/holder_reg.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

using namespace hspde;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Exhaustive minimization of sigma(mu) + n |lambda - mu| over a fine mu-grid.
double brute_inf_convolution(const HolderSpec& s, int n, double lambda, double half_width, int points) {
  double best = s(0.0, lambda);
  for (int k = 0; k < points; ++k) {
    const double mu = lambda - half_width + 2.0 * half_width * k / (points - 1);
    best = std::min(best, s(0.0, mu) + n * std::abs(lambda - mu));
  }
  return std::min(best, n * std::abs(lambda));
}

// argmax / max of h(r) = L r^alpha - n r by scanning r in (0, r_hi].
std::pair<double, double> brute_h_max(double alpha, double l, double n, double r_hi, int points) {
  double best = 0.0, arg = 0.0;
  for (int k = 1; k <= points; ++k) {
    const double r = r_hi * k / points;
    const double h = l * std::pow(r, alpha) - n * r;
    if (h > best) {
      best = h;
      arg = r;
    }
  }
  return {arg, best};
}

}  // namespace

TEST_CASE("closed-form constants match a brute-force maximization of h_n") {
  // values frozen from brute_h_max with 2e6 points
  CHECK_THAT(r0(0.5, 1.0, 2), WithinRel(1.0 / 16, 1e-14));
  CHECK_THAT(r0(0.5, 1.0, 1), WithinRel(0.25, 1e-14));
  CHECK_THAT(gap_bound(0.5, 1.0, 2), WithinRel(0.125, 1e-14));
  CHECK_THAT(gap_bound(0.5, 1.0, 4), WithinRel(0.0625, 1e-14));
  CHECK_THAT(c_alpha(0.5, 1.0), WithinRel(0.25, 1e-14));
  CHECK_THAT(c_alpha(0.5, 2.0), WithinRel(1.0, 1e-14));

  for (double alpha : {0.3, 0.5, 0.7}) {
    for (double l : {0.5, 1.0, 2.0}) {
      for (int n : {1, 3, 8}) {
        const double r = r0(alpha, l, n);
        const auto [arg, best] = brute_h_max(alpha, l, n, 4.0 * r, 400000);
        CHECK_THAT(arg, WithinRel(r, 1e-4));
        CHECK_THAT(best, WithinRel(gap_bound(alpha, l, n), 1e-8));
        CHECK(gap_bound(alpha, l, n) <= c_alpha(alpha, l) * (1 + 1e-12));
      }
      CHECK_THAT(gap_bound(alpha, l, 1), WithinRel(c_alpha(alpha, l), 1e-14));
    }
  }
  // n = L alpha makes the base of the power equal to 1
  CHECK(r0(0.5, 4.0, 2) == 1.0);
  CHECK(r0(0.25, 8.0, 2) == 1.0);
}

TEST_CASE("constants reject exponents outside (0,1)") {
  CHECK_THROWS_AS(r0(1.0, 1.0, 2), std::invalid_argument);
  CHECK_THROWS_AS(gap_bound(0.0, 1.0, 2), std::invalid_argument);
  CHECK_THROWS_AS(c_alpha(1.5, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(n0(0.0), std::invalid_argument);
}

TEST_CASE("n0 is the smallest integer above sqrt(c_sigma)") {
  CHECK(n0(1.0) == 1);
  CHECK(n0(2.0) == 2);
  CHECK(n0(9.0) == 3);
  CHECK(n0(9.0000001) == 4);
  CHECK(n0(0.01) == 1);
}

TEST_CASE("power-law growth constant is tight") {
  for (double alpha : {0.3, 0.5, 0.75}) {
    const double c = power_law_growth_constant(alpha, 1.0);
    double worst = 0.0;
    for (int k = 1; k < 200000; ++k) {
      const double x = k * 1e-4;
      worst = std::max(worst, std::pow(x, 2 * alpha) / (1 + x * x));
    }
    CHECK_THAT(worst, WithinRel(c, 1e-6));
  }
}

TEST_CASE("validate_holder accepts prototypes and flags violations") {
  const std::vector<double> ts{0.0, 0.5};
  const auto xs = dense_lambda_grid(-2, 2, 101, 2, -6);
  CHECK(validate_holder(power_law_sigma(0.5), ts, xs).ok());
  CHECK(validate_holder(linear_sigma(1.5), ts, xs).ok());
  HolderSpec bad = power_law_sigma(0.5);
  bad.l_alpha = 0.5;
  CHECK_FALSE(validate_holder(bad, ts, xs).holder_ok);
  HolderSpec shifted = power_law_sigma(0.5);
  shifted.eval = [](double, double x) { return 1.0 + std::sqrt(std::abs(x)); };
  CHECK_FALSE(validate_holder(shifted, ts, xs).zero_ok);
}

TEST_CASE("sigma_n on the square-root prototype equals min(n|x|, sqrt|x|)") {
  const auto reg = make_regularized(power_law_sigma(0.5), 2);
  CHECK(sigma_n_eval(reg, 0.0, 0.0) == 0.0);
  CHECK_THAT(sigma_n_eval(reg, 0.0, 1.0 / 16), WithinAbs(0.125, 1e-12));
  for (double x : {-3.0, -0.3, -0.01, 0.001, 0.2, 0.25, 0.26, 1.7}) {
    const double closed = std::min(2 * std::abs(x), std::sqrt(std::abs(x)));
    CHECK_THAT(sigma_n_eval(reg, 0.0, x), WithinAbs(closed, 1e-10));
  }
}

TEST_CASE("sigma_n matches exhaustive minimization on a wider window") {
  for (double alpha : {0.3, 0.5, 0.8}) {
    for (int n : {2, 5, 16}) {
      const auto reg = make_regularized(power_law_sigma(alpha, 1.3), n);
      // two cusps: |x|^a + 0.5 |x - 1|^a - 0.5 is 1.5-Hoelder, vanishes at 0 and is not monotone
      HolderSpec cusps = reg.base;
      cusps.l_alpha = 1.5;
      cusps.c_sigma = 4.0;
      cusps.eval = [alpha](double, double x) {
        return std::pow(std::abs(x), alpha) + 0.5 * std::pow(std::abs(x - 1), alpha) - 0.5;
      };
      const auto reg_w = make_regularized(cusps, n);
      for (double x : {-1.1, -0.2, 0.003, 0.05, 0.4, 2.5}) {
        for (const auto* r : {&reg, &reg_w}) {
          const double brute = brute_inf_convolution(r->base, n, x, 4 * r->bracket_radius, 400001);
          const double slack = 4 * r->bracket_radius * 2 / 400000 * (n + 1) + grid_error_bound(*r);
          CHECK(std::abs(sigma_n_eval(*r, 0.0, x) - brute) <= slack);
          CHECK(sigma_n_eval(*r, 0.0, x) <= r->base(0.0, x) + 1e-15);
        }
      }
    }
  }
}

TEST_CASE("Lipschitz sigma is a fixed point") {
  const auto reg = make_regularized(linear_sigma(1.0), 2);
  for (double x : {-5.0, -0.1, 0.0, 0.7, 11.0}) CHECK(sigma_n_eval(reg, 0.0, x) == x);
  CHECK_THROWS_AS(make_regularized(linear_sigma(3.0), 2), std::invalid_argument);
}

TEST_CASE("sigma_n_eval rejects bad input") {
  const auto reg = make_regularized(power_law_sigma(0.5), 2);
  CHECK_THROWS_AS(sigma_n_eval(reg, 0.0, std::nan("")), std::domain_error);
  CHECK_THROWS_AS(sigma_n_eval(reg, 0.0, INFINITY), std::domain_error);
  // c_sigma = 16 forces n0 = 4
  auto big = power_law_sigma(0.5, 2.0);
  big.c_sigma = 16.0;
  CHECK_THROWS_AS(make_regularized(big, 3), std::invalid_argument);
  CHECK_NOTHROW(make_regularized(big, 4));
}

TEST_CASE("measured sup gap of the square-root prototype is 1/(4n)") {
  for (int n : {2, 4, 32}) {
    const auto reg = make_regularized(power_law_sigma(0.5), n, 1024);
    const auto g = measure_sup_gap(reg, 0.0, -4.0, 4.0);
    CHECK_THAT(g.gap, WithinRel(0.25 / n, 1e-6));
    CHECK(g.gap <= gap_bound(0.5, 1.0, n) * (1 + 1e-9));
  }
}

TEST_CASE("verify_regularization report") {
  const std::vector<double> ts{0.0};
  std::vector<double> xs;
  for (int k = 0; k <= 2000; ++k) xs.push_back(-2.0 + 4.0 * k / 2000);
  const auto rep = verify_regularization(make_regularized(power_law_sigma(0.5), 2, 1024), xs, ts);
  CHECK(rep.pass());
  CHECK(rep.max_slope <= 2.0 * (1 + 1e-6));
  CHECK(rep.max_gap <= 0.125 * (1 + 1e-6));
  CHECK(rep.max_overshoot <= 0.0);

  const auto zero = verify_regularization(make_regularized(zero_sigma(), 1), xs, ts);
  CHECK(zero.max_gap == 0.0);
  CHECK(zero.max_slope == 0.0);
  CHECK(zero.pass());

  const auto j = to_json(rep);
  for (const char* key : {"max_overshoot", "max_slope", "max_gap", "bound", "pass"}) CHECK(j.contains(key));
}

TEST_CASE("gap decays with slope alpha/(alpha-1)") {
  for (double alpha : {0.3, 0.5, 0.7}) {
    std::vector<double> ns, gaps;
    for (int n = 2; n <= 256; n *= 2) {
      const auto reg = make_regularized(power_law_sigma(alpha), n, 512);
      ns.push_back(n);
      gaps.push_back(measure_sup_gap(reg, 0.0, -4.0, 4.0).gap);
    }
    CHECK_THAT(loglog_slope(ns, gaps), WithinAbs(alpha / (alpha - 1.0), 0.05));
  }
}

TEST_CASE("regularized growth bound holds on samples") {
  const auto s = power_law_sigma(0.75);
  const auto reg = make_regularized(s, n0(s.c_sigma));
  const double ca = c_alpha(0.75, 1.0);
  for (double x = -10; x <= 10; x += 0.137) {
    const double v = sigma_n_eval(reg, 0.0, x);
    CHECK(v * v <= 2 * (ca * ca + s.c_sigma * (1 + x * x)));
  }
}

TEST_CASE("tabulated sigma_n agrees with direct evaluation and stays n-Lipschitz") {
  const auto reg = make_regularized(power_law_sigma(0.75), 4);
  const SigmaTable table(reg, 3.0, 1e-4);
  double prev = table(0.0, -3.0);
  for (int k = 1; k <= 6000; ++k) {
    const double x = -3.0 + k * 1e-3;
    const double v = table(0.0, x);
    CHECK(std::abs(v - sigma_n_eval(reg, 0.0, x)) <= 1e-4);
    CHECK(std::abs(v - prev) <= 4 * 1e-3 * (1 + 1e-9));
    prev = v;
  }
  CHECK_THAT(table(0.0, 5.0), WithinAbs(sigma_n_eval(reg, 0.0, 5.0), 1e-15));
}

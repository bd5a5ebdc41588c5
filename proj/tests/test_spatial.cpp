#include "hspde/spatial.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

using namespace hspde;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

GridFunction random_state(const Grid& g, CounterRng& rng, double scale) {
  GridFunction u(g);
  for (Eigen::Index i = 0; i < u.values.size(); ++i) u.values[i] = scale * (2 * rng.uniform() - 1);
  return u;
}

LerayLionsCoeff linear_coeff() { return p_laplacian(2.0); }

LerayLionsCoeff negative_coeff() {
  LerayLionsCoeff c = p_laplacian(2.0);
  c.a_eval = [](const Point&, double, const Vec2& xi) { return Vec2(-xi); };
  c.a_jacobian = nullptr;
  return c;
}

// 1D flux-difference assembly written out by hand: faces i+1/2 for i = 0..N.
Eigen::VectorXd reference_1d(const GridFunction& u, double p, double lip) {
  const int n = u.grid.n_interior();
  const double h = u.grid.h();
  auto at = [&](int i) { return (i >= 1 && i <= n) ? u.values[i - 1] : 0.0; };
  std::vector<double> flux(static_cast<std::size_t>(n + 1));
  for (int i = 0; i <= n; ++i) {
    const double g = (at(i + 1) - at(i)) / h;
    const double mean = 0.5 * (at(i) + at(i + 1));
    flux[static_cast<std::size_t>(i)] = std::pow(std::abs(g), p - 2) * g - lip * std::sin(mean);
  }
  Eigen::VectorXd out(n);
  for (int i = 1; i <= n; ++i) out[i - 1] = -(flux[static_cast<std::size_t>(i)] - flux[static_cast<std::size_t>(i - 1)]) / h;
  return out;
}

}  // namespace

TEST_CASE("q_of_p") {
  CHECK(q_of_p(2.0) == 4.0);
  CHECK(q_of_p(3.0) == 12.0);
  CHECK(q_of_p(1.5) == 3.0);
  CHECK_THROWS_AS(q_of_p(1.0), std::invalid_argument);
  for (double p = 1.05; p < 6; p += 0.1) {
    CHECK(q_of_p(p) >= 2.0);
    CHECK(q_of_p(p) >= p / (p - 1));
  }
}

TEST_CASE("linear operator reproduces the discrete Laplacian eigenvalue") {
  const Grid g1(1, 64);
  const Discretization d1(g1, 2);
  const auto u = sine_profile(g1);
  const double h = g1.h();
  const double mu = 4 / (h * h) * std::pow(std::sin(std::numbers::pi * h / 2), 2);
  const auto out = apply_divergence_form(d1, linear_coeff(), u);
  CHECK((out.values - mu * u.values).cwiseAbs().maxCoeff() <= 1e-9 * mu);

  const Grid g2(2, 15);
  const Discretization d2(g2, 1);
  const auto u2 = sine_profile(g2);
  const double h2 = g2.h();
  const double mu2 = 8 / (h2 * h2) * std::pow(std::sin(std::numbers::pi * h2 / 2), 2);
  const auto out2 = apply_divergence_form(d2, linear_coeff(), u2);
  CHECK((out2.values - mu2 * u2.values).cwiseAbs().maxCoeff() <= 1e-9 * mu2);
}

TEST_CASE("zero state gives zero for the prototype") {
  const Grid g(1, 10);
  const Discretization d(g, 2);
  const GridFunction zero(g);
  CHECK(apply_divergence_form(d, p_laplacian(3.0), zero).values.cwiseAbs().maxCoeff() == 0.0);
  const auto pert = make_perturbation(3.0, 4);
  CHECK(apply_A_n(d, p_laplacian(3.0), sine_drift(1.0), pert, zero).values.cwiseAbs().maxCoeff() == 0.0);
  CHECK(j_form(d, pert, zero, sine_profile(g)) == 0.0);
}

TEST_CASE("convection prototype matches an independent flux assembly") {
  const Grid g(1, 33);
  const Discretization d(g, 2);
  CounterRng rng(9, 0);
  for (double p : {2.5, 3.0}) {
    const auto coeff = p_laplacian_convection(p, 0.7, 1);
    const auto u = random_state(g, rng, 1.5);
    const auto out = apply_divergence_form(d, coeff, u);
    const auto ref = reference_1d(u, p, 0.7);
    CHECK((out.values - ref).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, ref.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("discrete integration by parts is exact") {
  CounterRng rng(10, 0);
  for (const Grid& g : {Grid(1, 20), Grid(2, 7)}) {
    const Discretization d(g, 1);
    for (const auto& coeff : {p_laplacian(1.5), p_laplacian(3.0), p_laplacian_convection(2.5, 1.0, g.dimension())}) {
      const auto u = random_state(g, rng, 1.0);
      const auto v = random_state(g, rng, 1.0);
      const double lhs = inner(apply_divergence_form(d, coeff, u), v);
      const double rhs = flux_pairing(d, coeff, u, v);
      CHECK_THAT(lhs, WithinAbs(rhs, 1e-10 * std::max(1.0, std::abs(rhs))));
    }
  }
}

TEST_CASE("j_form on the minimal grid matches the hand expansion") {
  // N = 1, h = 1/2, m = 1, q = 4, u = v = c at the single node:
  // gamma = 0: h (c^2 + c^4); gamma = 1: two faces with D u = +-c/h.
  const Grid g(1, 1);
  const Discretization d(g, 1);
  const HigherOrderPerturbation pert{1, 4.0, 1.0};
  for (double c : {1.0, -0.5, 2.0}) {
    GridFunction u(g);
    u.values[0] = c;
    const double h = 0.5;
    const double expected = h * (c * c + std::pow(c, 4)) + 2 * h * (c * c / (h * h) + std::pow(c, 4) / std::pow(h, 4));
    CHECK_THAT(j_form(d, pert, u, u), WithinRel(expected, 1e-14));
  }
  GridFunction one(g);
  one.values[0] = 1.0;
  CHECK_THAT(j_form(d, pert, one, one), WithinRel(21.0, 1e-14));
  CHECK_THROWS_AS(Discretization(Grid(1, 1), 2), std::invalid_argument);
}

TEST_CASE("j_form dominates the H^m norm and j_operator is its Riesz map") {
  CounterRng rng(12, 0);
  for (const Grid& g : {Grid(1, 16), Grid(2, 6)}) {
    const Discretization d(g, 2);
    const auto pert = make_perturbation(2.5, 1);
    for (int trial = 0; trial < 5; ++trial) {
      const auto u = random_state(g, rng, 0.3);
      const auto v = random_state(g, rng, 0.3);
      const auto nm = norms(d, u, 2.5, pert.q);
      CHECK(j_form(d, pert, u, u) >= nm.hm0 * nm.hm0 * (1 - 1e-12));
      CHECK_THAT(inner(j_operator(d, pert, u), v), WithinRel(j_form(d, pert, u, v), 1e-10));
    }
  }
}

TEST_CASE("difference operators") {
  const Grid g(1, 6);
  const Discretization d(g, 2);
  REQUIRE(d.differences().size() == 3);
  CHECK(d.differences()[1].op.rows() == 7);
  CHECK(d.differences()[2].op.rows() == 8);
  // a telescoping first difference sums to zero for zero boundary data
  CounterRng rng(2, 0);
  const auto u = random_state(g, rng, 1.0);
  CHECK(std::abs((d.differences()[1].op * u.values).sum()) <= 1e-12);
  // D^2 equals D^1 applied twice on the zero extension
  const int n = 6;
  const double h = g.h();
  auto at = [&](int i) { return (i >= 1 && i <= n) ? u.values[i - 1] : 0.0; };
  const Eigen::VectorXd d2 = d.differences()[2].op * u.values;
  for (int row = 0; row < n + 2; ++row) {
    const int i = row - 1;
    CHECK_THAT(d2[row], WithinAbs((at(i + 2) - 2 * at(i + 1) + at(i)) / (h * h), 1e-9));
  }

  const Grid g2(2, 4);
  const Discretization dd(g2, 2);
  CHECK(dd.differences().size() == 6);
}

TEST_CASE("duality of apply_A_n") {
  CounterRng rng(13, 0);
  for (const Grid& g : {Grid(1, 24), Grid(2, 6)}) {
    const Discretization d(g, 2);
    const auto coeff = p_laplacian_convection(2.5, 0.5, g.dimension());
    const auto drift = sine_drift(-1.0);
    const auto pert = make_perturbation(2.5, 8);
    const auto u = random_state(g, rng, 0.5);
    const auto v = random_state(g, rng, 0.5);
    double fv = 0;
    for (Eigen::Index i = 0; i < u.values.size(); ++i) fv += g.cell_volume() * drift(u.values[i]) * v.values[i];
    const double rhs = flux_pairing(d, coeff, u, v) + pert.strength * j_form(d, pert, u, v) + fv;
    CHECK_THAT(inner(apply_A_n(d, coeff, drift, pert, u), v), WithinAbs(rhs, 1e-10 * std::max(1.0, std::abs(rhs))));

    const auto no_pert = apply_A_n(d, coeff, drift, std::nullopt, u);
    const auto with = apply_A_n(d, coeff, drift, pert, u);
    const double jn = std::sqrt(inner(j_operator(d, pert, u), j_operator(d, pert, u)));
    CHECK(std::sqrt(inner(with - no_pert, with - no_pert)) <= pert.strength * jn * (1 + 1e-12));
  }
}

TEST_CASE("analytic Jacobian agrees with finite differences") {
  CounterRng rng(14, 0);
  for (const Grid& g : {Grid(1, 12), Grid(2, 5)}) {
    const Discretization d(g, 2);
    const auto pert = make_perturbation(2.5, 4);
    for (bool analytic : {true, false}) {
      auto coeff = p_laplacian_convection(2.5, 0.8, g.dimension());
      if (!analytic) coeff.a_jacobian = nullptr;
      const auto drift = sine_drift(0.6);
      const auto u = random_state(g, rng, 0.4);
      const Eigen::MatrixXd jac = Eigen::MatrixXd(jacobian_A_n(d, coeff, drift, pert, u));
      const auto n = u.values.size();
      Eigen::MatrixXd fd(n, n);
      const double step = 1e-6;
      for (Eigen::Index k = 0; k < n; ++k) {
        GridFunction up = u, um = u;
        up.values[k] += step;
        um.values[k] -= step;
        fd.col(k) = (apply_A_n(d, coeff, drift, pert, up).values - apply_A_n(d, coeff, drift, pert, um).values) / (2 * step);
      }
      CHECK((jac - fd).cwiseAbs().maxCoeff() <= 1e-5 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("assembled operator is monotone up to the drift") {
  CounterRng rng(15, 0);
  const Grid g(1, 30);
  const Discretization d(g, 2);
  const auto drift = sine_drift(-1.0);
  const auto pert = make_perturbation(2.5, 4);
  for (const auto& coeff : {p_laplacian(2.5), p_laplacian(1.5), p_laplacian(4.0)}) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto u = random_state(g, rng, 1.0);
      const auto v = random_state(g, rng, 1.0);
      const auto du = apply_A_n(d, coeff, drift, pert, u) - apply_A_n(d, coeff, drift, pert, v);
      const double gap = inner(du, u - v);
      CHECK(gap >= -drift.l_f * inner(u - v, u - v) * (1 + 1e-12));
    }
  }
}

TEST_CASE("norms") {
  const Grid g(1, 9);
  const Discretization d(g, 2);
  const GridFunction zero(g);
  const auto z = norms(d, zero, 2.5, 6);
  CHECK(z.l1 == 0);
  CHECK(z.l2 == 0);
  CHECK(z.lp == 0);
  CHECK(z.w1p_seminorm == 0);
  CHECK(z.hm0 == 0);
  CHECK(z.wmq == 0);

  // the constant 1 on interior nodes: the midpoint weights sum to N h = N / (N + 1)
  const auto one = GridFunction::from_function(g, [](const Point&) { return 1.0; });
  const auto n1 = norms(d, one, 2.5, 6);
  CHECK_THAT(n1.l1, WithinRel(0.9, 1e-14));
  CHECK_THAT(n1.l2, WithinRel(std::sqrt(0.9), 1e-14));

  CounterRng rng(16, 0);
  const auto u = random_state(g, rng, 1.0);
  const auto a = norms(d, u, 2.5, 6);
  const auto b = norms(d, -3.0 * u, 2.5, 6);
  CHECK_THAT(b.l1, WithinRel(3 * a.l1, 1e-13));
  CHECK_THAT(b.l2, WithinRel(3 * a.l2, 1e-13));
  CHECK_THAT(b.lp, WithinRel(3 * a.lp, 1e-13));
  CHECK_THAT(b.w1p_seminorm, WithinRel(3 * a.w1p_seminorm, 1e-13));
  CHECK_THAT(b.hm0, WithinRel(3 * a.hm0, 1e-13));
  CHECK_THAT(b.wmq, WithinRel(3 * a.wmq, 1e-13));
  CHECK(a.l1 > 0);
  CHECK(a.hm0 > a.l2);
}

TEST_CASE("structure conditions") {
  CounterRng rng(17, 0);
  const auto p2 = check_structure_conditions(p_laplacian(2.0), 1, 10000, rng);
  CHECK(p2.pass());
  const auto p4 = check_structure_conditions(p_laplacian(4.0), 2, 100000, rng);
  CHECK(p4.pass());
  CHECK(p4.worst_monotonicity >= 0.0);
  CHECK(check_structure_conditions(p_laplacian(1.5), 2, 10000, rng).pass());
  CHECK(check_structure_conditions(p_laplacian_convection(2.5, 1.0, 1), 1, 20000, rng).pass());
  CHECK(check_structure_conditions(p_laplacian_convection(3.0, 2.0, 2), 2, 20000, rng).pass());
  const auto broken = check_structure_conditions(negative_coeff(), 1, 1000, rng);
  CHECK_FALSE(broken.a1_ok());
  CHECK(broken.violations_a1 > 0);
  CHECK(to_json(broken)["pass"] == false);
}

TEST_CASE("coefficient validation") {
  CHECK_NOTHROW(p_laplacian(1.5).validate(1));
  CHECK_THROWS_AS(p_laplacian(1.0).validate(1), std::invalid_argument);
  CHECK_THROWS_AS(p_laplacian(1.0).validate(2), std::invalid_argument);
  CHECK_THROWS_AS(p_laplacian_convection(1.8, 1.0, 1), std::invalid_argument);
  auto c = p_laplacian(3.0);
  c.nu = 3.0;
  CHECK_THROWS_AS(c.validate(1), std::invalid_argument);
}

TEST_CASE("drift validation") {
  std::vector<double> xs;
  for (int k = -50; k <= 50; ++k) xs.push_back(0.1 * k);
  CHECK(sine_drift(1.0).validate(xs));
  CHECK(zero_drift().validate(xs));
  DriftSpec bad = sine_drift(1.0);
  bad.l_f = 0.5;
  CHECK_FALSE(bad.validate(xs));
}

TEST_CASE("embedding constants and threshold") {
  const Grid g(1, 31);
  const Discretization d(g, 2);
  const auto emb = estimate_embedding_constants(d, 2.5);
  CHECK_THAT(emb.c_poin, WithinRel(1 / std::numbers::pi, 1e-2));
  CHECK(emb.c_e > 0.0);
  CHECK(n0_threshold(2.0, 7.5, 0.0, 1.0, emb) == 2.0);
  CHECK(n0_threshold(0.5, 7.5, 1e-12, 1.5, emb) >= 1.0);
}

TEST_CASE("initial profiles and CSV") {
  const Grid g(2, 5);
  const auto bump = bump_profile(g, 2.0);
  CHECK_THAT(bump.values[static_cast<Eigen::Index>(g.index(3, 3))], WithinRel(2.0, 1e-14));
  const auto r1 = random_profile(g, 5);
  const auto r2 = random_profile(g, 5);
  CHECK(r1.values == r2.values);
  CHECK(random_profile(g, 6).values != r1.values);

  const auto path = (std::filesystem::temp_directory_path() / "hspde_gf_test.csv").string();
  save_grid_function_csv(r1, path);
  CHECK(load_grid_function_csv(g, path).values == r1.values);
  CHECK_THROWS_AS(load_grid_function_csv(Grid(2, 4), path), GridMismatch);
  std::remove(path.c_str());
}

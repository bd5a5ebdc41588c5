#include "hspde/noise.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

using namespace hspde;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

GridFunction random_state(const Grid& g, CounterRng& rng, double scale) {
  GridFunction u(g);
  for (Eigen::Index i = 0; i < u.values.size(); ++i) u.values[i] = scale * (2 * rng.uniform() - 1);
  return u;
}

Kernel random_kernel(const Grid& g, CounterRng& rng) {
  const auto n = static_cast<Eigen::Index>(g.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) m(i, j) = m(j, i) = 2 * rng.uniform() - 1;
  }
  return make_kernel(g, m);
}

}  // namespace

TEST_CASE("kernel constants") {
  const Grid g(1, 9);
  const Kernel k = constant_kernel(g, 2.0);
  // row norm: h * N * 4, L2 norm: (h N)^2 * 4
  const double w = g.h() * 9;
  CHECK_THAT(k.c_k, WithinRel(4 * w, 1e-14));
  CHECK_THAT(k.l2_norm_sq, WithinRel(4 * w * w, 1e-14));
  Eigen::MatrixXd asym = Eigen::MatrixXd::Zero(9, 9);
  asym(0, 1) = 1;
  CHECK_THROWS_AS(make_kernel(g, asym), std::invalid_argument);
  CHECK_THROWS_AS(make_kernel(g, Eigen::MatrixXd::Zero(3, 3)), GridMismatch);
}

TEST_CASE("apply_B trivial cases") {
  const Grid g(1, 16);
  const auto one = GridFunction::from_function(g, [](const Point&) { return 1.0; });
  const auto zero_op = NoiseOperator::from_holder(zero_sigma(), constant_kernel(g, 1.0));
  CHECK(apply_B(zero_op, 0.0, one, one).values.cwiseAbs().maxCoeff() == 0.0);
  const auto zero_k = NoiseOperator::from_holder(linear_sigma(1.0), constant_kernel(g, 0.0));
  CHECK(apply_B(zero_k, 0.0, one, one).values.cwiseAbs().maxCoeff() == 0.0);
  CHECK(zero_op.is_zero());
  CHECK(zero_k.is_zero());

  // k = 1, sigma = identity, v = phi = 1: sigma(1) * Q_h[1] = N h
  const auto op = NoiseOperator::from_holder(linear_sigma(1.0), constant_kernel(g, 1.0));
  const auto b = apply_B(op, 0.0, one, one);
  for (Eigen::Index i = 0; i < b.values.size(); ++i) CHECK_THAT(b.values[i], WithinRel(16 * g.h(), 1e-14));
}

TEST_CASE("apply_B is linear in phi and checks grids") {
  const Grid g(1, 20);
  CounterRng rng(1, 0);
  const auto op = NoiseOperator::from_holder(power_law_sigma(0.5), gaussian_kernel(g, 0.2));
  const auto v = random_state(g, rng, 2.0);
  const auto p1 = random_state(g, rng, 1.0);
  const auto p2 = random_state(g, rng, 1.0);
  const auto lhs = apply_B(op, 0.0, v, 0.3 * p1 + (-1.7) * p2);
  const auto rhs = 0.3 * apply_B(op, 0.0, v, p1) + (-1.7) * apply_B(op, 0.0, v, p2);
  CHECK((lhs.values - rhs.values).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK_THROWS_AS(apply_B(op, 0.0, GridFunction(Grid(1, 21)), p1), GridMismatch);
}

TEST_CASE("rank-one kernel HS norm") {
  const Grid g(1, 31);
  const double c = 1.7;
  const auto one = GridFunction::from_function(g, [](const Point&) { return 1.0; });
  const auto op = NoiseOperator::from_holder(linear_sigma(1.0), constant_kernel(g, c));
  // ||k(x,.)||^2 = c^2 * (N h); integral over x adds another N h
  const double w = 31 * g.h();
  CHECK_THAT(hs_norm_sq(op, 0.0, one), WithinRel(c * c * w * w, 1e-14));
  CHECK_THAT(hs_norm_sq_parseval_oracle(op, 0.0, one), WithinRel(c * c * w * w, 1e-10));
}

TEST_CASE("Parseval identity on random draws in 1D and 2D") {
  CounterRng rng(3, 0);
  for (const Grid& g : {Grid(1, 24), Grid(2, 5)}) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto op = NoiseOperator::from_holder(power_law_sigma(0.75, 1.2), random_kernel(g, rng));
      const auto v = random_state(g, rng, 3.0);
      CHECK_THAT(hs_norm_sq_parseval_oracle(op, 0.0, v), WithinRel(hs_norm_sq(op, 0.0, v), 1e-10));
    }
  }
}

TEST_CASE("sine basis is orthonormal and complete") {
  for (const Grid& g : {Grid(1, 12), Grid(2, 4)}) {
    const Eigen::MatrixXd e = sine_basis(g);
    const Eigen::MatrixXd gram = g.cell_volume() * e.transpose() * e;
    CHECK((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("HS growth bounds") {
  const Grid g(1, 40);
  CounterRng rng(4, 0);
  const auto s = power_law_sigma(0.75);
  const Kernel k = gaussian_kernel(g, 0.1, 2.0);
  const auto op = NoiseOperator::from_holder(s, k);
  const auto reg = make_regularized(s, 3);
  const auto op_n = NoiseOperator::from_regularized(reg, k);
  const double ca = c_alpha(0.75, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto v = random_state(g, rng, 5.0);
    const double v2 = inner(v, v);
    CHECK(within_bound(hs_norm_sq(op, 0.0, v), s.c_sigma * (k.l2_norm_sq + k.c_k * v2)));
    CHECK(within_bound(hs_norm_sq(op_n, 0.0, v),
                       2 * ((ca * ca + s.c_sigma) * k.l2_norm_sq + s.c_sigma * k.c_k * v2)));
  }
}

TEST_CASE("Hoelder modulus check") {
  const Grid g(1, 50);
  CounterRng rng(5, 0);
  const Kernel k = gaussian_kernel(g, 0.15);
  for (double alpha : {0.5, 0.75}) {
    const auto op = NoiseOperator::from_holder(power_law_sigma(alpha), k);
    for (int trial = 0; trial < 100; ++trial) {
      const auto v = random_state(g, rng, 2.0);
      const auto w = random_state(g, rng, 2.0);
      const auto r = holder_modulus_check(op, 0.0, v, w);
      CHECK(r.pass);
      if (alpha == 0.5) {
        const double l2 = std::sqrt(inner(v - w, v - w));
        CHECK(r.lhs <= k.c_k * l2 * (1 + 1e-12));
      }
    }
    const auto v = random_state(g, rng, 1.0);
    const auto same = holder_modulus_check(op, 0.0, v, v);
    CHECK(same.lhs == 0.0);
    CHECK(same.kernel_bound == 0.0);
  }
  // Lipschitz case: C_k L^2 ||v-w||_2^2
  const auto lin = NoiseOperator::from_holder(linear_sigma(2.0), k);
  const auto v = random_state(g, rng, 1.0);
  const auto w = random_state(g, rng, 1.0);
  const auto r = holder_modulus_check(lin, 0.0, v, w);
  CHECK(r.pass);
  CHECK(r.lhs <= k.c_k * 4 * inner(v - w, v - w) * (1 + 1e-12));
  // regularized operator uses the Lipschitz modulus (1, n)
  const auto op_n = NoiseOperator::from_regularized(make_regularized(power_law_sigma(0.5), 4), k);
  CHECK(op_n.alpha() == 1.0);
  CHECK(op_n.l_alpha() == 4.0);
  CHECK(holder_modulus_check(op_n, 0.0, v, w).pass);
}

TEST_CASE("kernel CSV round trip") {
  const Grid g(2, 4);
  const Kernel k = gaussian_kernel(g, 0.3, 1.5);
  const auto path = (std::filesystem::temp_directory_path() / "hspde_kernel_test.csv").string();
  save_kernel_csv(k, path);
  const Kernel back = load_kernel_csv(path);
  CHECK(back.grid == g);
  CHECK((back.values - k.values).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("Q-Wiener increments") {
  const Grid g(1, 15);
  auto s1 = QWienerSampler::sine(g, 42, 3);
  auto s2 = QWienerSampler::sine(g, 42, 3);
  CHECK(s1.sample_increment(0.01).values == s2.sample_increment(0.01).values);
  CHECK(s1.sample_increment(0.0).values.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(s1.sample_increment(-1.0), std::invalid_argument);
  // zero dt still advances the stream so paths stay aligned
  CHECK(s1.rng().counter() == s2.rng().counter() + 8);

  auto other = QWienerSampler::sine(g, 42, 4);
  CHECK(other.sample_increment(0.01).values != s2.sample_increment(0.01).values);

  CHECK_THAT(s1.trace(), WithinRel([] {
               double t = 0;
               for (int j = 1; j <= 15; ++j) t += 1.0 / (j * j);
               return t;
             }(), 1e-14));

  CHECK_THROWS_AS(QWienerSampler(g, {1.0}, Eigen::MatrixXd::Ones(15, 1), CounterRng()), std::invalid_argument);
  CHECK_THROWS_AS(QWienerSampler(g, {-1.0}, sine_basis(g).col(0), CounterRng()), std::invalid_argument);
}

TEST_CASE("increment coefficient variance matches q_j dt") {
  const Grid g(1, 7);
  auto s = QWienerSampler::sine(g, 11, 0);
  const double dt = 0.02;
  const int draws = 100000;
  std::vector<double> sum2(7, 0.0), sum4(7, 0.0);
  for (int d = 0; d < draws; ++d) {
    const auto dw = s.sample_increment(dt);
    for (int j = 0; j < 7; ++j) {
      const double c = s.coefficient(dw, j);
      sum2[static_cast<std::size_t>(j)] += c * c;
      sum4[static_cast<std::size_t>(j)] += c * c * c * c;
    }
  }
  for (int j = 0; j < 7; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    const double mean = sum2[jj] / draws;
    const double var = sum4[jj] / draws - mean * mean;
    const double se = std::sqrt(var / draws);
    const double target = s.eigenvalues()[jj] * dt;
    CHECK(std::abs(mean - target) <= 3 * se);
  }
}

TEST_CASE("truncated sampler keeps the largest modes") {
  const Grid g(2, 4);
  const auto s = QWienerSampler::sine(g, 1, 0, 3);
  REQUIRE(s.eigenvalues().size() == 3);
  CHECK(s.eigenvalues()[0] == 1.0);
  CHECK(s.eigenvalues()[1] == 0.25);
  CHECK(s.eigenvalues()[2] == 0.25);
}

#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "hhvg/mathcore.hpp"

using namespace hhvg;

namespace {

// Density written out from the textbook formula (explicit inverse and
// determinant) so the Monte-Carlo oracle shares no code with gaussian_kl.
double explicit_log_density(const Gaussian& g, const Eigen::VectorXd& x) {
  const Eigen::VectorXd d = x - g.mean;
  const double n = static_cast<double>(x.size());
  return -0.5 * (d.dot(g.cov.inverse() * d) + std::log(g.cov.determinant()) +
                 n * std::log(2.0 * std::numbers::pi));
}

double monte_carlo_kl(const Gaussian& p, const Gaussian& q, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const Eigen::MatrixXd chol = p.cov.llt().matrixL();
  double sum = 0.0;
  Eigen::VectorXd z(p.dim());
  for (int i = 0; i < samples; ++i) {
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = normal(rng);
    const Eigen::VectorXd x = p.mean + chol * z;
    sum += explicit_log_density(p, x) - explicit_log_density(q, x);
  }
  return sum / samples;
}

Gaussian make_gaussian(std::initializer_list<double> mean, const Eigen::MatrixXd& cov) {
  Gaussian g;
  g.mean = Eigen::Map<const Eigen::VectorXd>(mean.begin(), static_cast<Eigen::Index>(mean.size()));
  g.cov = cov;
  return g;
}

Eigen::Vector4d random_vec4(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng), u(rng)};
}

Eigen::Matrix4d random_spd4(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::Matrix4d m;
  for (int i = 0; i < 16; ++i) m.data()[i] = u(rng);
  return m * m.transpose() + 0.5 * Eigen::Matrix4d::Identity();
}

}  // namespace

TEST_CASE("gaussian_kl of identical distributions is zero") {
  const Gaussian g = make_gaussian({0.0}, Eigen::MatrixXd::Identity(1, 1));
  CHECK(std::abs(gaussian_kl(g, g)) < 1e-12);
}

TEST_CASE("gaussian_kl agrees with a Monte-Carlo estimate") {
  SUBCASE("1-D shifted mean") {
    const Gaussian p = make_gaussian({1.0}, Eigen::MatrixXd::Identity(1, 1));
    const Gaussian q = make_gaussian({0.0}, Eigen::MatrixXd::Identity(1, 1));
    const double mc = monte_carlo_kl(p, q, 1'000'000, 7);
    CHECK(std::abs(gaussian_kl(p, q) - mc) <= 0.01 * std::abs(mc));
  }
  SUBCASE("2-D anisotropic covariance") {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(2, 2);
    cov(0, 0) = 1.0;
    cov(1, 1) = 2.0;
    const Gaussian p = make_gaussian({0.0, 0.0}, cov);
    const Gaussian q = make_gaussian({0.0, 0.0}, Eigen::MatrixXd::Identity(2, 2));
    const double mc = monte_carlo_kl(p, q, 1'000'000, 11);
    CHECK(std::abs(gaussian_kl(p, q) - mc) <= 0.01 * std::abs(mc));
  }
}

TEST_CASE("gaussian_kl is non-negative and rejects bad inputs") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    Gaussian4 p{random_vec4(rng, -1, 1), random_spd4(rng)};
    Gaussian4 q{random_vec4(rng, -1, 1), random_spd4(rng)};
    CHECK(gaussian_kl(p, q) >= 0.0);
  }
  const Gaussian a = make_gaussian({0.0}, Eigen::MatrixXd::Identity(1, 1));
  const Gaussian b = make_gaussian({0.0, 0.0}, Eigen::MatrixXd::Identity(2, 2));
  CHECK_THROWS_AS(gaussian_kl(a, b), ContractViolation);

  Gaussian bad = b;
  bad.cov(1, 1) = -1.0;
  CHECK_THROWS_WITH_AS(gaussian_kl(b, bad), doctest::Contains("'q'"), NumericalDomainError);
  CHECK_THROWS_WITH_AS(gaussian_kl(bad, b), doctest::Contains("'p'"), NumericalDomainError);
}

TEST_CASE("householder_cov examples") {
  HouseholderCovParams4 params;
  params.d = Eigen::Vector4d::Ones();
  params.v = Eigen::Vector4d(0.3, -1.2, 0.7, 2.0);
  CHECK((householder_cov(params) - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-12);

  params.d = Eigen::Vector4d(4, 1, 1, 1);
  params.v = Eigen::Vector4d::UnitX();
  Eigen::Matrix4d expected = Eigen::Matrix4d::Identity();
  expected(0, 0) = 4.0;
  CHECK((householder_cov(params) - expected).cwiseAbs().maxCoeff() < 1e-12);

  std::mt19937_64 rng(5);
  params.d = Eigen::Vector4d(2, 3, 0.5, 1);
  for (int i = 0; i < 50; ++i) {
    params.v = random_vec4(rng, -2, 2);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(householder_cov(params));
    const Eigen::Vector4d expected_eigs(0.5, 1, 2, 3);
    CHECK((eig.eigenvalues() - expected_eigs).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("householder reflector is orthogonal and degenerate directions are rejected") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Matrix4d h = householder_reflector<4>(random_vec4(rng, -3, 3));
    CHECK((h * h.transpose() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() <= 1e-10);
  }
  HouseholderCovParams4 params{Eigen::Vector4d::Ones(), Eigen::Vector4d::Constant(1e-10)};
  CHECK_THROWS_AS(householder_cov(params), DegenerateDirectionError);
  params.v = Eigen::Vector4d::UnitX();
  params.d[2] = 0.0;
  CHECK_THROWS_AS(householder_cov(params), ContractViolation);
}

TEST_CASE("gaussian_entropy") {
  const Gaussian unit = make_gaussian({0.0}, Eigen::MatrixXd::Identity(1, 1));
  CHECK(gaussian_entropy(unit) == doctest::Approx(0.5 * std::log(2 * std::numbers::pi * std::numbers::e)));
  CHECK(gaussian_entropy(unit) == doctest::Approx(1.4189).epsilon(1e-4));

  Gaussian wide = unit;
  wide.cov(0, 0) = 4.0;
  CHECK(gaussian_entropy(wide) - gaussian_entropy(unit) == doctest::Approx(std::log(2.0)));

  // midpoint-rule quadrature of -p log p over +-9 standard deviations
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(2, 2);
  cov(0, 0) = 1.0;
  cov(1, 1) = 2.0;
  const Gaussian g = make_gaussian({0.0, 0.0}, cov);
  const int cells = 600;
  const double hx = 18.0 / cells;
  const double hy = 18.0 * std::sqrt(2.0) / cells;
  double h = 0.0;
  for (int i = 0; i < cells; ++i) {
    for (int j = 0; j < cells; ++j) {
      const Eigen::Vector2d x(-9.0 + (i + 0.5) * hx, -9.0 * std::sqrt(2.0) + (j + 0.5) * hy);
      const double lp = explicit_log_density(g, x);
      h -= std::exp(lp) * lp * hx * hy;
    }
  }
  CHECK(std::abs(gaussian_entropy(g) - h) < 1e-3);

  Gaussian singular = make_gaussian({0.0, 0.0}, Eigen::MatrixXd::Zero(2, 2));
  singular.cov(0, 0) = -1.0;
  CHECK_THROWS_AS(gaussian_entropy(singular), NumericalDomainError);
}

TEST_CASE("gaussian_kl gradients match central differences through the Householder map") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.2, 2.0);
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Gaussian4 p{random_vec4(rng, -1, 1), random_spd4(rng)};
    Eigen::Matrix<double, 12, 1> theta;
    theta << random_vec4(rng, -1, 1), u(rng), u(rng), u(rng), u(rng), random_vec4(rng, -2, 2);

    auto kl_at = [&](const Eigen::Matrix<double, 12, 1>& t) {
      HouseholderCovParams4 hp{t.segment<4>(4), t.segment<4>(8)};
      return gaussian_kl(p, Gaussian4{t.segment<4>(0), householder_cov(hp)});
    };

    HouseholderCovParams4 hp{theta.segment<4>(4), theta.segment<4>(8)};
    KlGradient<4> grad;
    gaussian_kl(p, Gaussian4{theta.segment<4>(0), householder_cov(hp)}, &grad);
    const auto back = householder_cov_backward(hp, grad.cov_q);
    Eigen::Matrix<double, 12, 1> analytic;
    analytic << grad.mean_q, back.d, back.v;

    for (int k = 0; k < 12; ++k) {
      auto up = theta;
      auto down = theta;
      up[k] += h;
      down[k] -= h;
      const double numeric = (kl_at(up) - kl_at(down)) / (2 * h);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[k]), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic[k]) / denom);
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("gaussian_kl gradient with respect to p") {
  std::mt19937_64 rng(4);
  const Gaussian4 q{random_vec4(rng, -1, 1), random_spd4(rng)};
  Gaussian4 p{random_vec4(rng, -1, 1), random_spd4(rng)};
  KlGradient<4> grad;
  gaussian_kl(p, q, &grad);
  const double h = 1e-6;
  for (int k = 0; k < 4; ++k) {
    Gaussian4 up = p, down = p;
    up.mean[k] += h;
    down.mean[k] -= h;
    CHECK((gaussian_kl(up, q) - gaussian_kl(down, q)) / (2 * h) ==
          doctest::Approx(grad.mean_p[k]).epsilon(1e-5));
  }
  // symmetric perturbation of one off-diagonal pair
  Gaussian4 up = p, down = p;
  up.cov(0, 1) += h;
  up.cov(1, 0) += h;
  down.cov(0, 1) -= h;
  down.cov(1, 0) -= h;
  CHECK((gaussian_kl(up, q) - gaussian_kl(down, q)) / (2 * h) ==
        doctest::Approx(grad.cov_p(0, 1) + grad.cov_p(1, 0)).epsilon(1e-5));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> random_rows(std::mt19937_64& rng, int rows, int cols) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<double> out(static_cast<std::size_t>(rows * cols));
  for (int r = 0; r < rows; ++r) {
    double total = 0.0;
    for (int c = 0; c < cols; ++c) total += out[r * cols + c] = u(rng);
    for (int c = 0; c < cols; ++c) out[r * cols + c] /= total;
    // absorb rounding so each row sums to 1 within 1e-12
    double s = 0.0;
    for (int c = 0; c + 1 < cols; ++c) s += out[r * cols + c];
    out[r * cols + cols - 1] = 1.0 - s;
  }
  return out;
}

DiscreteJoint random_joint(std::mt19937_64& rng, int states, int actions, int next) {
  DiscreteJoint j;
  j.states = states;
  j.actions = actions;
  j.next_states = next;
  j.transition = random_rows(rng, states * actions, next);
  j.policy = random_rows(rng, states, actions);
  j.reference = random_rows(rng, states, next);
  return j;
}

}  // namespace

TEST_CASE("discrete decomposition identity holds on random tables") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const DiscreteJoint j = random_joint(rng, 4, 3, 3);
    for (const auto& d : discrete_hetero_decomposition(j)) {
      CHECK_FALSE(d.infinite);
      CHECK(std::abs(d.lhs - (d.mi_term + d.kl_term)) <= 1e-9);
      CHECK(d.mi_term >= -1e-12);
      CHECK(d.kl_term >= -1e-12);
    }
  }
}

TEST_CASE("discrete decomposition edge cases") {
  std::mt19937_64 rng(13);
  DiscreteJoint j = random_joint(rng, 1, 3, 3);

  SUBCASE("reference equal to the true marginal") {
    for (int sn = 0; sn < 3; ++sn) {
      double m = 0.0;
      for (int a = 0; a < 3; ++a) m += j.p(0, a, sn) * j.pi(0, a);
      j.reference[sn] = m;
    }
    j.reference[2] = 1.0 - j.reference[0] - j.reference[1];
    const auto d = discrete_hetero_decomposition(j, 0);
    CHECK(std::abs(d.kl_term) < 1e-12);
    CHECK(std::abs(d.lhs - d.mi_term) < 1e-12);
  }
  SUBCASE("deterministic policy") {
    j.policy = {0.0, 1.0, 0.0};
    const auto d = discrete_hetero_decomposition(j, 0);
    CHECK(std::abs(d.mi_term) < 1e-12);
    CHECK(std::abs(d.lhs - d.kl_term) < 1e-12);
  }
  SUBCASE("zero reference mass under positive marginal") {
    j.reference = {0.5, 0.5, 0.0};
    const auto d = discrete_hetero_decomposition(j, 0);
    CHECK(d.infinite);
    CHECK(std::isinf(d.kl_term));
    CHECK(std::isinf(d.lhs));
  }
  SUBCASE("invalid tables") {
    j.policy = {0.5, 0.6, -0.1};
    CHECK_THROWS_AS(discrete_hetero_decomposition(j, 0), ContractViolation);
  }
}

#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "hhvg/diffnet.hpp"
#include "hhvg/errors.hpp"

using namespace hhvg;

TEST_CASE("xavier_init bounds, determinism and variance") {
  const Eigen::MatrixXd one = xavier_init(1, 1, 42);
  CHECK(std::abs(one(0, 0)) <= std::sqrt(3.0));

  const Eigen::MatrixXd a = xavier_init(8, 5, 99);
  const Eigen::MatrixXd b = xavier_init(8, 5, 99);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * 40) == 0);
  CHECK_FALSE(a.isApprox(xavier_init(8, 5, 100)));

  CHECK_THROWS_AS(xavier_init(0, 3, 1), ContractViolation);

  // uniform on [-b, b] has variance b^2 / 3 = 2 / (fan_in + fan_out)
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 10'000; ++seed) {
    const Eigen::MatrixXd w = xavier_init(64, 64, seed);
    sum += w.sum();
    sum2 += w.squaredNorm();
    n += static_cast<std::size_t>(w.size());
  }
  const double mean = sum / static_cast<double>(n);
  const double var = sum2 / static_cast<double>(n) - mean * mean;
  CHECK(std::abs(var - 1.0 / 64.0) <= 0.05 / 64.0);
}

TEST_CASE("grad_check on a quadratic") {
  ParamSet params;
  params.add("p", (Eigen::MatrixXd(2, 3) << 1, -2, 3, 0.5, 0.25, -4).finished());
  const LossFn half_norm = [](ParamSet& ps, bool with_grad) {
    const auto& e = ps[0];
    if (with_grad) ps[0].grad += e.value;
    return 0.5 * e.value.squaredNorm();
  };
  CHECK(grad_check(half_norm, params).max_rel_error < 1e-8);

  const LossFn broken = [](ParamSet&, bool) { return std::nan(""); };
  CHECK_THROWS_AS(grad_check(broken, params), NumericalDomainError);
}

TEST_CASE("Mlp backward matches finite differences") {
  ParamSet params;
  Mlp net(params, "net", {4, 7, 5, 3}, 17);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(4, 6), target(3, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = normal(rng);
  const LossFn loss = [&](ParamSet& ps, bool with_grad) {
    MlpCache cache;
    const Eigen::MatrixXd y = net.forward(ps, x, with_grad ? &cache : nullptr);
    if (with_grad) net.backward(ps, cache, y - target);
    return 0.5 * (y - target).squaredNorm();
  };
  CHECK(grad_check(loss, params).max_rel_error < 1e-6);
}

TEST_CASE("sgd_step arithmetic, clearing and poisoned updates") {
  ParamSet params;
  params.add("p", Eigen::MatrixXd::Constant(1, 1, 1.0));

  sgd_step(params, 0.1);
  CHECK(params[0].value(0, 0) == 1.0);
  CHECK(params.step_count() == 1);

  params[0].grad(0, 0) = 0.5;
  sgd_step(params, 0.1);
  CHECK(params[0].value(0, 0) == doctest::Approx(0.95));
  CHECK(params[0].grad(0, 0) == 0.0);
  CHECK(params.step_count() == 2);

  params[0].grad(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(sgd_step(params, 0.1), PoisonedUpdateError);
  CHECK(params[0].value(0, 0) == doctest::Approx(0.95));
  CHECK(params.step_count() == 2);
}

TEST_CASE("sgd_step clips by global norm") {
  ParamSet params;
  params.add("a", Eigen::MatrixXd::Zero(1, 1));
  params.add("b", Eigen::MatrixXd::Zero(1, 1));
  params[0].grad(0, 0) = 30.0;
  params[1].grad(0, 0) = 40.0;
  sgd_step(params, 1.0, 10.0);
  CHECK(params[0].value(0, 0) == doctest::Approx(-6.0));
  CHECK(params[1].value(0, 0) == doctest::Approx(-8.0));
}

TEST_CASE("sgd on a convex quadratic never increases the loss") {
  ParamSet params;
  params.add("x", (Eigen::MatrixXd(3, 1) << 3.0, -2.0, 1.5).finished());
  const Eigen::Vector3d curvature(1.0, 4.0, 9.0);
  auto loss = [&] { return 0.5 * (curvature.array() * params[0].value.col(0).array().square()).sum(); };
  double previous = loss();
  for (int i = 0; i < 100; ++i) {
    params[0].grad.col(0) = curvature.cwiseProduct(params[0].value.col(0));
    sgd_step(params, 0.05);
    const double now = loss();
    CHECK(now <= previous);
    previous = now;
  }
}

TEST_CASE("adam optimizer reduces a quadratic") {
  ParamSet params;
  params.add("x", Eigen::MatrixXd::Constant(2, 1, 5.0));
  Optimizer opt({OptimizerKind::adam, 0.0});
  for (int i = 0; i < 500; ++i) {
    params[0].grad = params[0].value;
    opt.step(params, 0.05);
  }
  CHECK(params[0].value.norm() < 0.5);
  CHECK(params.step_count() == 500);
}

TEST_CASE("plateau_update") {
  SUBCASE("strictly decreasing losses never reduce") {
    LrSchedule s(1e-3, 5, 0.1);
    for (int i = 0; i < 50; ++i) s.plateau_update(10.0 - 0.01 * i);
    CHECK(s.reductions() == 0);
    CHECK(s.rate() == 1e-3);
  }
  SUBCASE("constant loss for one window reduces once") {
    LrSchedule s(1e-3, 5, 0.1);
    s.plateau_update(1.0);
    for (int i = 0; i < 5; ++i) s.plateau_update(1.0);
    CHECK(s.reductions() == 1);
    CHECK(s.rate() == doctest::Approx(1e-4));
  }
  SUBCASE("constant loss for two windows reduces twice") {
    LrSchedule s(1e-3, 5, 0.1);
    s.plateau_update(1.0);
    for (int i = 0; i < 10; ++i) s.plateau_update(1.0);
    CHECK(s.reductions() == 2);
    CHECK(s.rate() == doctest::Approx(1e-5));
  }
  SUBCASE("improvements smaller than the tolerance do not count") {
    LrSchedule s(1.0, 3, 0.5);
    s.plateau_update(1.0);
    for (int i = 1; i <= 3; ++i) s.plateau_update(1.0 - 1e-7 * i);
    CHECK(s.reductions() == 1);
  }
  SUBCASE("rate never increases and tracks reductions") {
    LrSchedule s(0.5, 2, 0.3);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 1);
    double last = s.rate();
    for (int i = 0; i < 300; ++i) {
      const double r = s.plateau_update(u(rng));
      CHECK(r <= last);
      last = r;
    }
    CHECK(s.rate() == doctest::Approx(0.5 * std::pow(0.3, s.reductions())));
  }
  CHECK_THROWS_AS(LrSchedule(1.0, 3, 0.5).plateau_update(std::nan("")), NumericalDomainError);
}

TEST_CASE("checkpoint round trip preserves values bit-exactly") {
  ParamSet a;
  Mlp net(a, "net", {4, 3, 2}, 5);
  ParamSet b;
  b.add("scalar", Eigen::MatrixXd::Constant(1, 1, 3.25));
  const auto path = std::filesystem::temp_directory_path() / "hhvg_ckpt_test.bin";
  save_checkpoint(path, {{"fm/", &a}, {"vf/", &b}});
  const auto arrays = load_checkpoint(path);
  CHECK(arrays.size() == a.entries().size() + 1);

  ParamSet a2;
  Mlp net2(a2, "net", {4, 3, 2}, 6);
  CHECK_FALSE(a2.same_values(a));
  restore_params(a2, "fm/", arrays);
  CHECK(a2.same_values(a));
  CHECK(arrays.back().name == "vf/scalar");
  std::filesystem::remove(path);
}

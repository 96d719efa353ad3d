#include <cmath>
#include <random>

#include "doctest.h"
#include "hhvg/errors.hpp"
#include "hhvg/models.hpp"

using namespace hhvg;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.hidden = {6};
  return cfg;
}

TransitionBatch random_batch(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.0, 1.0), vel(-0.5, 0.5), act(-2.0, 2.0);
  TransitionBatch b{Eigen::MatrixXd(4, n), Eigen::MatrixXd(2, n), Eigen::MatrixXd(4, n)};
  for (int i = 0; i < n; ++i) {
    b.states.col(i) << pos(rng), pos(rng), vel(rng), vel(rng);
    b.actions.col(i) << act(rng), act(rng);
    b.next.col(i) = b.states.col(i) + 0.05 * Eigen::Vector4d(vel(rng), vel(rng), vel(rng), vel(rng));
  }
  return b;
}

// Trunk output that encodes the given terms through the output bias.
void set_constant_terms(ForwardModel& fm, const Eigen::VectorXd& column) {
  for (auto& e : fm.params.entries()) e.value.setZero();
  fm.params.entries().back().value = column;
}

Eigen::VectorXd identity_column() {
  Eigen::VectorXd col = Eigen::VectorXd::Zero(ForwardModel::kTrunkOutputs);
  for (int i = 0; i < 4; ++i) col[i * 4 + i] = 1.0;
  return col;
}

}  // namespace

TEST_CASE("identity-initialised forward model predicts approximately s' = s") {
  ForwardModel fm(ModelConfig{}, 3);
  const State s{0.2, 0.7, 0.1, -0.3};
  const Eigen::Vector4d f = fm_mean(fm, s, Eigen::Vector2d::Zero());
  CHECK((f - s.vec()).norm() < 1.0);
}

TEST_CASE("fm_mean and fm_dist on hand-set terms") {
  ForwardModel fm(small_config(), 1);
  Eigen::VectorXd col = identity_column();
  col.segment<4>(56) << 0.01, -0.02, 0.0, 0.5;
  set_constant_terms(fm, col);
  const State s{0.3, 0.4, 0.0, 0.0};
  const Eigen::Vector4d f = fm_mean(fm, s, Eigen::Vector2d(1.0, -1.0));
  CHECK(f.isApprox(Eigen::Vector4d(0.31, 0.38, 0.0, 0.5), 1e-14));

  const Gaussian4 g = fm_dist(fm, s, Eigen::Vector2d(1.0, -1.0));
  CHECK(g.mean.isApprox(f, 1e-14));
  const Eigen::Matrix4d expected = (1e-4 + kCovRidge) * Eigen::Matrix4d::Identity();
  CHECK((g.cov - expected).norm() < 1e-18);

  // action-dependent jacobian: J = A + a_1 B^1
  col.segment<16>(16).setZero();
  col[16 + 0] = 0.5;  // B^1(0,0)
  col.segment<8>(48).setZero();
  col[48 + 0] = 0.1;  // C(0,0)
  set_constant_terms(fm, col);
  const Gaussian4 h = fm_dist(fm, s, Eigen::Vector2d(2.0, 0.0));
  CHECK(h.cov(0, 0) == doctest::Approx(4.0 * 1e-4 + kCovRidge).epsilon(1e-12));
  CHECK(h.mean[0] == doctest::Approx(2.0 * 0.3 + 0.2 + 0.01).epsilon(1e-12));
}

TEST_CASE("global jacobians ignore the state input") {
  ModelConfig cfg = small_config();
  cfg.state_dependent_jacobians = false;
  ForwardModel fm(cfg, 9);
  const Eigen::MatrixXd a = fm.trunk(Eigen::Vector4d(0.1, 0.2, 0.3, 0.4));
  const Eigen::MatrixXd b = fm.trunk(Eigen::Vector4d(0.9, 0.5, -0.3, 0.0));
  CHECK(a == b);
}

TEST_CASE("fm_loss values and gradient") {
  ForwardModel fm(small_config(), 2);
  set_constant_terms(fm, identity_column());
  TransitionBatch b{Eigen::MatrixXd::Zero(4, 2), Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(4, 2)};
  b.states.col(0) << 0.5, 0.5, 0.0, 0.0;
  b.states.col(1) << 0.2, 0.2, 0.0, 0.0;
  b.next = b.states;
  CHECK(fm_loss(fm, b, false) == 0.0);
  b.next(0, 1) += 0.2;
  CHECK(fm_loss(fm, b, false) == doctest::Approx(0.02));
  CHECK(fm_sample_errors(fm, b)[1] == doctest::Approx(0.04));

  ForwardModel net(small_config(), 5);
  const TransitionBatch batch = random_batch(7, 11);
  const LossFn loss = [&](ParamSet&, bool g) { return fm_loss(net, batch, g); };
  CHECK(grad_check(loss, net.params).max_rel_error < 1e-5);

  TransitionBatch empty;
  CHECK_THROWS_AS(fm_loss(net, empty, false), ContractViolation);
}

TEST_CASE("meta-model output parametrisation") {
  Eigen::VectorXd raw = Eigen::VectorXd::Zero(12);
  raw.segment<4>(4).setConstant(-1000.0);
  raw[8] = 1.0;
  const MetaOutput out = meta_output(Eigen::Vector4d(0.1, 0.2, 0.3, 0.4), raw);
  CHECK(out.mean == Eigen::Vector4d(0.1, 0.2, 0.3, 0.4));
  for (int i = 0; i < 4; ++i) CHECK(out.cov_params.d[i] >= kScaleFloor);

  MetaModel mm(small_config(), 4);
  const Gaussian4 q = mm_dist(mm, State{0.5, 0.5, 0.0, 0.0});
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(q.cov);
  CHECK(eig.eigenvalues().minCoeff() >= kScaleFloor * (1.0 - 1e-9));
  CHECK(softplus(800.0) == 800.0);
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("devaluation objective") {
  SUBCASE("zero when the meta-model reproduces the forward model") {
    ForwardModel fm(small_config(), 1);
    set_constant_terms(fm, identity_column());
    MetaModel mm(small_config(), 1);
    for (auto& e : mm.params.entries()) e.value.setZero();
    // d = softplus(x) + 1e-6 = 1e-4 + ridge, v arbitrary
    Eigen::VectorXd bias = Eigen::VectorXd::Zero(12);
    const double target = 1e-4 + kCovRidge - kScaleFloor;
    bias.segment<4>(4).setConstant(std::log(std::expm1(target)));
    bias[8] = 1.0;
    mm.params.entries().back().value = bias;
    const State s{0.4, 0.6, 0.0, 0.0};
    CHECK(std::abs(devaluation_objective(fm, mm, s, Eigen::Vector2d::Zero())) < 1e-8);
  }
  SUBCASE("composition of the closed-form pieces") {
    ForwardModel fm(small_config(), 7);
    MetaModel mm(small_config(), 8);
    const TransitionBatch b = random_batch(5, 3);
    const Eigen::VectorXd values = devaluation_values(fm, mm, b);
    for (int i = 0; i < 5; ++i) {
      const State s = State::from(b.states.col(i));
      const double direct = gaussian_kl(fm_dist(fm, s, b.actions.col(i)), mm_dist(mm, s));
      CHECK(values[i] == doctest::Approx(direct).epsilon(1e-12));
      CHECK(values[i] >= 0.0);
    }
    CHECK(devaluation_loss(fm, mm, b, {}, false) == doctest::Approx(values.mean()).epsilon(1e-12));
  }
}

TEST_CASE("devaluation gradient reaches psi only") {
  ForwardModel fm(small_config(), 7);
  MetaModel mm(small_config(), 8);
  const TransitionBatch b = random_batch(4, 9);
  const ParamSet fm_before = fm.params;
  mm.params.zero_grad();
  devaluation_loss(fm, mm, b, {}, true);
  CHECK(fm.params.same_values(fm_before));
  for (const auto& e : fm.params.entries()) CHECK(e.grad.isZero(0.0));
  CHECK(mm.params.grad_norm() > 0.0);

  const LossFn loss = [&](ParamSet&, bool g) { return devaluation_loss(fm, mm, b, {}, g); };
  CHECK(grad_check(loss, mm.params, 1e-6).max_rel_error < 1e-4);
}

TEST_CASE("weighted devaluation gradient is the weighted sum of per-sample gradients") {
  ForwardModel fm(small_config(), 12);
  MetaModel mm(small_config(), 13);
  const TransitionBatch b = random_batch(4, 14);
  const Eigen::Vector4d w(0.1, 2.0, 0.0, 10.0);

  std::vector<Eigen::MatrixXd> expected;
  for (const auto& e : mm.params.entries()) expected.push_back(Eigen::MatrixXd::Zero(e.value.rows(), e.value.cols()));
  for (int i = 0; i < 4; ++i) {
    TransitionBatch one{b.states.col(i), b.actions.col(i), b.next.col(i)};
    mm.params.zero_grad();
    devaluation_loss(fm, mm, one, {}, true);
    for (std::size_t k = 0; k < expected.size(); ++k) expected[k] += w[i] / 4.0 * mm.params[k].grad;
  }
  mm.params.zero_grad();
  devaluation_loss(fm, mm, b, w, true);
  for (std::size_t k = 0; k < expected.size(); ++k) {
    CHECK((mm.params[k].grad - expected[k]).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + expected[k].cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("density ratio weights") {
  CHECK(clip_density_ratio(0.01) == kRatioClipLow);
  CHECK(clip_density_ratio(1e6) == kRatioClipHigh);
  CHECK(clip_density_ratio(1.5) == 1.5);
  CHECK(std::isnan(clip_density_ratio(std::nan(""))));

  ForwardModel fm(small_config(), 21);
  const State s{0.3, 0.3, 0.1, 0.0};
  const Eigen::Vector2d a(0.4, -0.4);
  const State target = State::from(fm_mean(fm, s, a));
  CHECK(density_ratio_weight(fm, fm, s, a, target) == doctest::Approx(1.0));

  ForwardModel moved = fm;
  moved.params.entries().back().value(56, 0) += 0.05;  // shift the x offset by 5 sigma
  CHECK(density_ratio_weight(fm, moved, s, a, target) == kRatioClipLow);
  CHECK(density_ratio_weight(moved, fm, s, a, target) == kRatioClipHigh);
}

TEST_CASE("mm_update_weighted lowers the weighted objective") {
  ForwardModel fm(small_config(), 31);
  MetaModel mm(small_config(), 32);
  const TransitionBatch b = random_batch(16, 33);
  Optimizer opt;
  const MetaUpdateReport first = mm_update_weighted(mm, fm, fm, b, 1e-4, opt);
  CHECK(first.dropped == 0);
  CHECK(first.weights.isApproxToConstant(1.0, 1e-9));
  const double after = devaluation_loss(fm, mm, b, first.weights, false);
  CHECK(after < first.loss_before);
}

TEST_CASE("value loss") {
  ValueNet vn(small_config(), 41);
  const TransitionBatch b = random_batch(6, 42);
  const Eigen::VectorXd targets = Eigen::VectorXd::LinSpaced(6, -1.0, 1.0);
  const Eigen::VectorXd weights = Eigen::VectorXd::LinSpaced(6, 0.5, 2.0);
  const Eigen::RowVectorXd v = vn.values(b.states);
  const double expected = (weights.array() * 0.5 * (targets - v.transpose()).array().square()).mean();
  CHECK(value_loss(vn, b.states, targets, weights, false) == doctest::Approx(expected).epsilon(1e-14));
  const LossFn loss = [&](ParamSet&, bool g) { return value_loss(vn, b.states, targets, weights, g); };
  CHECK(grad_check(loss, vn.params).max_rel_error < 1e-5);
}

TEST_CASE("policy probabilities") {
  const Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(kActionCount, 2);
  const Eigen::MatrixXd uniform = softmax_columns(zeros);
  CHECK(uniform.isApproxToConstant(1.0 / kActionCount, 1e-15));
  const double entropy = -(uniform.col(0).array() * uniform.col(0).array().log()).sum();
  CHECK(entropy == doctest::Approx(std::log(121.0)));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd logits(kActionCount, 1);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = normal(rng);
  const Eigen::MatrixXd shifted = (logits.array() + 1000.0).matrix();
  CHECK(softmax_columns(logits).isApprox(softmax_columns(shifted), 1e-12));
  CHECK(softmax_columns(shifted).sum() == doctest::Approx(1.0));

  PolicyNet p(small_config(), 43);
  const Eigen::VectorXd probs = policy_probs(p, State{0.1, 0.1, 0.0, 0.0});
  CHECK(probs.size() == kActionCount);
  CHECK(probs.sum() == doctest::Approx(1.0));
  CHECK((probs.array() > 0.0).all());
}

TEST_CASE("policy loss value and gradient") {
  PolicyNet p(small_config(), 44);
  const TransitionBatch b = random_batch(3, 45);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd q(kActionCount, 3);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = normal(rng);
  const Eigen::Vector3d w(1.0, 0.5, 2.0);
  const Eigen::MatrixXd pi = policy_probs(p, b.states);
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) expected -= w[i] * pi.col(i).dot(q.col(i)) / 3.0;
  CHECK(policy_loss(p, b.states, q, w, false) == doctest::Approx(expected).epsilon(1e-13));
  const LossFn loss = [&](ParamSet&, bool g) { return policy_loss(p, b.states, q, w, g); };
  CHECK(grad_check(loss, p.params).max_rel_error < 1e-5);

  // constant action values leave the policy unchanged
  const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(kActionCount, 3, 2.5);
  p.params.zero_grad();
  policy_loss(p, b.states, flat, w, true);
  CHECK(p.params.grad_norm() < 1e-12);
}

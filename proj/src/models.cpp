#include "hhvg/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hhvg/errors.hpp"

namespace hhvg {

namespace {

// Trunk output layout (row-major blocks).
constexpr int kOffsetA = 0;
constexpr int kOffsetB1 = 16;
constexpr int kOffsetB2 = 32;
constexpr int kOffsetC = 48;
constexpr int kOffsetO = 56;

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw NumericalDomainError(std::string(what) + " produced non-finite output");
}

}  // namespace

Eigen::MatrixXd state_matrix(const std::vector<State>& states) {
  Eigen::MatrixXd out(kStateDim, static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = states[i].vec();
  return out;
}

// ---------------------------------------------------------------------------

BilinearTerms BilinearTerms::from_column(const Eigen::Ref<const Eigen::VectorXd>& col) {
  BilinearTerms t;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      t.a(r, c) = col[kOffsetA + r * 4 + c];
      t.b[0](r, c) = col[kOffsetB1 + r * 4 + c];
      t.b[1](r, c) = col[kOffsetB2 + r * 4 + c];
    }
    for (int c = 0; c < 2; ++c) t.c(r, c) = col[kOffsetC + r * 2 + c];
    t.o[r] = col[kOffsetO + r];
  }
  return t;
}

Eigen::Matrix4d BilinearTerms::jacobian(const Eigen::Vector2d& action) const {
  return a + action[0] * b[0] + action[1] * b[1];
}

Eigen::Vector4d BilinearTerms::mean(const Eigen::Vector4d& s, const Eigen::Vector2d& action) const {
  return jacobian(action) * s + c * action + o;
}

ForwardModel::ForwardModel(const ModelConfig& config, std::uint64_t seed)
    : net_(params, "trunk", layer_sizes(kStateDim, config.hidden, kTrunkOutputs), seed),
      input_cov_(config.input_std * config.input_std * Eigen::Matrix4d::Identity()),
      state_dependent_(config.state_dependent_jacobians) {
  require(config.input_std > 0.0, "ForwardModel: input_std must be positive");
  if (config.identity_init) {
    auto& bias = params[net_.bias_index(net_.layer_count() - 1)].value;
    for (int i = 0; i < 4; ++i) bias(kOffsetA + i * 4 + i, 0) = 1.0;
  }
}

Eigen::MatrixXd ForwardModel::trunk(const Eigen::MatrixXd& states, MlpCache* cache) const {
  require(states.rows() == kStateDim, "ForwardModel: states must be 4xN");
  Eigen::MatrixXd out = state_dependent_
                            ? net_.forward(params, states, cache)
                            : net_.forward(params, Eigen::MatrixXd::Zero(kStateDim, states.cols()), cache);
  require_finite(out, "forward-model trunk");
  return out;
}

void ForwardModel::trunk_backward(const MlpCache& cache, const Eigen::MatrixXd& grad_out) {
  net_.backward(params, cache, grad_out);
}

Eigen::Vector4d fm_mean(const ForwardModel& fm, const State& s, const Eigen::Vector2d& a) {
  const Eigen::Vector4d sv = s.vec();
  const Eigen::MatrixXd out = fm.trunk(sv);
  return BilinearTerms::from_column(out.col(0)).mean(sv, a);
}

Eigen::MatrixXd fm_mean(const ForwardModel& fm, const Eigen::MatrixXd& states,
                        const Eigen::MatrixXd& actions) {
  require(actions.rows() == kActionDim && actions.cols() == states.cols(),
          "fm_mean: actions must be 2xN matching states");
  const Eigen::MatrixXd out = fm.trunk(states);
  Eigen::MatrixXd pred(kStateDim, states.cols());
  for (Eigen::Index i = 0; i < states.cols(); ++i) {
    pred.col(i) = BilinearTerms::from_column(out.col(i))
                      .mean(states.col(i), actions.col(i));
  }
  return pred;
}

Gaussian4 fm_dist(const BilinearTerms& terms, const Eigen::Matrix4d& input_cov,
                  const Eigen::Vector4d& s, const Eigen::Vector2d& a) {
  const Eigen::Matrix4d j = terms.jacobian(a);
  Gaussian4 g;
  g.mean = terms.mean(s, a);
  g.cov = j * input_cov * j.transpose();
  g.cov.diagonal().array() += kCovRidge;
  return g;
}

Gaussian4 fm_dist(const ForwardModel& fm, const State& s, const Eigen::Vector2d& a) {
  const Eigen::Vector4d sv = s.vec();
  const Eigen::MatrixXd out = fm.trunk(sv);
  return fm_dist(BilinearTerms::from_column(out.col(0)), fm.input_cov(), sv, a);
}

Eigen::VectorXd fm_sample_errors(const ForwardModel& fm, const TransitionBatch& batch) {
  const Eigen::MatrixXd pred = fm_mean(fm, batch.states, batch.actions);
  return (batch.next - pred).colwise().squaredNorm().transpose();
}

double fm_loss(ForwardModel& fm, const TransitionBatch& batch, bool with_grad) {
  const Eigen::Index n = batch.size();
  require(n > 0, "fm_loss: empty batch");
  require(batch.next.cols() == n && batch.actions.cols() == n, "fm_loss: ragged batch");
  MlpCache cache;
  const Eigen::MatrixXd out = fm.trunk(batch.states, with_grad ? &cache : nullptr);
  Eigen::MatrixXd grad_out;
  if (with_grad) grad_out.setZero(ForwardModel::kTrunkOutputs, n);
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector4d s = batch.states.col(i);
    const Eigen::Vector2d a = batch.actions.col(i);
    const Eigen::Vector4d resid =
        batch.next.col(i) - BilinearTerms::from_column(out.col(i)).mean(s, a);
    total += resid.squaredNorm();
    if (!with_grad) continue;
    const Eigen::Vector4d g = -2.0 * inv_n * resid;
    auto col = grad_out.col(i);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        col[kOffsetA + r * 4 + c] = g[r] * s[c];
        col[kOffsetB1 + r * 4 + c] = a[0] * g[r] * s[c];
        col[kOffsetB2 + r * 4 + c] = a[1] * g[r] * s[c];
      }
      col[kOffsetC + r * 2] = g[r] * a[0];
      col[kOffsetC + r * 2 + 1] = g[r] * a[1];
      col[kOffsetO + r] = g[r];
    }
  }
  const double loss = total * inv_n;
  if (!std::isfinite(loss)) throw NumericalDomainError("fm_loss: non-finite loss");
  if (with_grad) fm.trunk_backward(cache, grad_out);
  return loss;
}

// ---------------------------------------------------------------------------

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

MetaModel::MetaModel(const ModelConfig& config, std::uint64_t seed)
    : net_(params, "meta", layer_sizes(kStateDim, config.hidden, kOutputs), seed) {
  // start the reflection direction away from the origin
  auto& bias = params[net_.bias_index(net_.layer_count() - 1)].value;
  bias(8, 0) = 1.0;
}

Eigen::MatrixXd MetaModel::raw(const Eigen::MatrixXd& states, MlpCache* cache) const {
  require(states.rows() == kStateDim, "MetaModel: states must be 4xN");
  Eigen::MatrixXd out = net_.forward(params, states, cache);
  require_finite(out, "meta-model");
  return out;
}

void MetaModel::raw_backward(const MlpCache& cache, const Eigen::MatrixXd& grad_out) {
  net_.backward(params, cache, grad_out);
}

MetaOutput meta_output(const Eigen::Vector4d& s, const Eigen::Ref<const Eigen::VectorXd>& raw) {
  MetaOutput out;
  out.mean = s + raw.segment<4>(0);
  for (int i = 0; i < 4; ++i) out.cov_params.d[i] = softplus(raw[4 + i]) + kScaleFloor;
  out.cov_params.v = raw.segment<4>(8);
  return out;
}

Gaussian4 meta_gaussian(const MetaOutput& out) {
  return {out.mean, householder_cov(out.cov_params)};
}

Gaussian4 mm_dist(const MetaModel& mm, const State& s) {
  const Eigen::Vector4d sv = s.vec();
  const Eigen::MatrixXd raw = mm.raw(sv);
  return meta_gaussian(meta_output(sv, raw.col(0)));
}

double devaluation_objective(const ForwardModel& fm, const MetaModel& mm, const State& s,
                             const Eigen::Vector2d& a) {
  return gaussian_kl(fm_dist(fm, s, a), mm_dist(mm, s));
}

Eigen::VectorXd devaluation_values(const ForwardModel& fm, const MetaModel& mm,
                                   const TransitionBatch& batch) {
  const Eigen::Index n = batch.size();
  const Eigen::MatrixXd trunk = fm.trunk(batch.states);
  const Eigen::MatrixXd raw = mm.raw(batch.states);
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector4d s = batch.states.col(i);
    const Gaussian4 p = fm_dist(BilinearTerms::from_column(trunk.col(i)), fm.input_cov(), s,
                                batch.actions.col(i));
    out[i] = gaussian_kl(p, meta_gaussian(meta_output(s, raw.col(i))));
  }
  return out;
}

double devaluation_loss(const ForwardModel& fm, MetaModel& mm, const TransitionBatch& batch,
                        const Eigen::VectorXd& weights, bool with_grad) {
  const Eigen::Index n = batch.size();
  require(n > 0, "devaluation_loss: empty batch");
  require(weights.size() == 0 || weights.size() == n, "devaluation_loss: weight count mismatch");
  const Eigen::MatrixXd trunk = fm.trunk(batch.states);
  MlpCache cache;
  const Eigen::MatrixXd raw = mm.raw(batch.states, with_grad ? &cache : nullptr);
  Eigen::MatrixXd grad_raw;
  if (with_grad) grad_raw.setZero(MetaModel::kOutputs, n);

  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  KlGradient<4> kl_grad;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = weights.size() == 0 ? 1.0 : weights[i];
    if (w == 0.0) continue;
    const Eigen::Vector4d s = batch.states.col(i);
    const Gaussian4 p = fm_dist(BilinearTerms::from_column(trunk.col(i)), fm.input_cov(), s,
                                batch.actions.col(i));
    const MetaOutput q = meta_output(s, raw.col(i));
    const double kl = gaussian_kl(p, meta_gaussian(q), with_grad ? &kl_grad : nullptr);
    total += w * kl;
    if (!with_grad) continue;
    const double scale = w * inv_n;
    const auto hh = householder_cov_backward(q.cov_params, kl_grad.cov_q);
    auto col = grad_raw.col(i);
    col.segment<4>(0) = scale * kl_grad.mean_q;
    for (int k = 0; k < 4; ++k) col[4 + k] = scale * hh.d[k] * sigmoid(raw(4 + k, i));
    col.segment<4>(8) = scale * hh.v;
  }
  const double loss = total * inv_n;
  if (!std::isfinite(loss)) throw NumericalDomainError("devaluation_loss: non-finite loss");
  if (with_grad) mm.raw_backward(cache, grad_raw);
  return loss;
}

double density_ratio_weight(const ForwardModel& fm_old, const ForwardModel& fm_new,
                            const State& s, const Eigen::Vector2d& a, const State& s_next) {
  const Eigen::Vector4d target = s_next.vec();
  double log_ratio = std::numeric_limits<double>::quiet_NaN();
  try {
    log_ratio = gaussian_log_density(fm_dist(fm_new, s, a), target) -
                gaussian_log_density(fm_dist(fm_old, s, a), target);
  } catch (const NumericalDomainError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  if (std::isnan(log_ratio)) return log_ratio;
  // clip in log space so that overflowing ratios still saturate at the bound
  return clip_density_ratio(std::exp(std::clamp(log_ratio, -50.0, 50.0)));
}

double clip_density_ratio(double ratio) {
  if (std::isnan(ratio)) return ratio;
  return std::clamp(ratio, kRatioClipLow, kRatioClipHigh);
}

MetaUpdateReport mm_update_weighted(MetaModel& mm, const ForwardModel& fm_old,
                                    const ForwardModel& fm_new, const TransitionBatch& batch,
                                    double rate, Optimizer& optimizer) {
  const Eigen::Index n = batch.size();
  require(n > 0, "mm_update_weighted: empty batch");
  MetaUpdateReport report;
  report.weights.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = density_ratio_weight(fm_old, fm_new, State::from(batch.states.col(i)),
                                          batch.actions.col(i), State::from(batch.next.col(i)));
    if (!std::isfinite(w)) {
      report.weights[i] = 0.0;
      ++report.dropped;
    } else {
      report.weights[i] = w;
    }
  }
  mm.params.zero_grad();
  report.loss_before = devaluation_loss(fm_new, mm, batch, report.weights, true);
  optimizer.step(mm.params, rate);
  return report;
}

// ---------------------------------------------------------------------------

ValueNet::ValueNet(const ModelConfig& config, std::uint64_t seed)
    : net_(params, "value", layer_sizes(kStateDim, config.hidden, 1), seed) {}

Eigen::RowVectorXd ValueNet::values(const Eigen::MatrixXd& states, MlpCache* cache) const {
  Eigen::MatrixXd out = net_.forward(params, states, cache);
  require_finite(out, "value net");
  return out.row(0);
}

double ValueNet::value(const State& s) const {
  return values(s.vec())[0];
}

void ValueNet::backward(const MlpCache& cache, const Eigen::RowVectorXd& grad_out) {
  net_.backward(params, cache, grad_out);
}

double value_loss(ValueNet& vn, const Eigen::MatrixXd& states, const Eigen::VectorXd& targets,
                  const Eigen::VectorXd& weights, bool with_grad) {
  const Eigen::Index n = states.cols();
  require(n > 0, "value_loss: empty batch");
  require(targets.size() == n && (weights.size() == 0 || weights.size() == n),
          "value_loss: size mismatch");
  MlpCache cache;
  const Eigen::RowVectorXd v = vn.values(states, with_grad ? &cache : nullptr);
  const Eigen::VectorXd w = weights.size() == 0 ? Eigen::VectorXd::Ones(n) : weights;
  const Eigen::VectorXd resid = targets - v.transpose();
  const double loss = 0.5 * (w.array() * resid.array().square()).sum() / static_cast<double>(n);
  if (!std::isfinite(loss)) throw NumericalDomainError("value_loss: non-finite loss");
  if (with_grad) {
    const Eigen::RowVectorXd grad = (-(w.array() * resid.array()) / static_cast<double>(n)).matrix().transpose();
    vn.backward(cache, grad);
  }
  return loss;
}

// ---------------------------------------------------------------------------

PolicyNet::PolicyNet(const ModelConfig& config, std::uint64_t seed)
    : net_(params, "policy", layer_sizes(kStateDim, config.hidden, kActionCount), seed) {}

Eigen::MatrixXd PolicyNet::logits(const Eigen::MatrixXd& states, MlpCache* cache) const {
  Eigen::MatrixXd out = net_.forward(params, states, cache);
  require_finite(out, "policy logits");
  return out;
}

void PolicyNet::backward(const MlpCache& cache, const Eigen::MatrixXd& grad_logits) {
  net_.backward(params, cache, grad_logits);
}

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double top = logits.col(j).maxCoeff();
    out.col(j) = (logits.col(j).array() - top).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

Eigen::VectorXd policy_probs(const PolicyNet& p, const State& s) {
  return softmax_columns(p.logits(s.vec())).col(0);
}

Eigen::MatrixXd policy_probs(const PolicyNet& p, const Eigen::MatrixXd& states) {
  return softmax_columns(p.logits(states));
}

double policy_loss(PolicyNet& p, const Eigen::MatrixXd& states, const Eigen::MatrixXd& action_values,
                   const Eigen::VectorXd& weights, bool with_grad) {
  const Eigen::Index n = states.cols();
  require(n > 0, "policy_loss: empty batch");
  require(action_values.rows() == kActionCount && action_values.cols() == n,
          "policy_loss: action values must be 121xN");
  require(weights.size() == 0 || weights.size() == n, "policy_loss: weight count mismatch");
  MlpCache cache;
  const Eigen::MatrixXd probs = softmax_columns(p.logits(states, with_grad ? &cache : nullptr));
  const Eigen::VectorXd w = weights.size() == 0 ? Eigen::VectorXd::Ones(n) : weights;
  const Eigen::RowVectorXd expected = probs.cwiseProduct(action_values).colwise().sum();
  const double loss = -(expected.transpose().array() * w.array()).sum() / static_cast<double>(n);
  if (!std::isfinite(loss)) throw NumericalDomainError("policy_loss: non-finite objective");
  if (with_grad) {
    Eigen::MatrixXd grad(kActionCount, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      grad.col(j) = (-w[j] / static_cast<double>(n)) *
                    probs.col(j).cwiseProduct(action_values.col(j).array().matrix() -
                                              Eigen::VectorXd::Constant(kActionCount, expected[j]));
    }
    p.backward(cache, grad);
  }
  return loss;
}

}  // namespace hhvg

#pragma once

// The four trainable functions: bilinear forward model, Householder
// meta-model, state-value approximator and categorical action policy.

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "hhvg/diffnet.hpp"
#include "hhvg/env.hpp"
#include "hhvg/mathcore.hpp"

namespace hhvg {

inline constexpr int kStateDim = 4;
inline constexpr int kActionDim = 2;
inline constexpr int kActionCount = 121;
/// Floor added to softplus when publishing meta-model scales.
inline constexpr double kScaleFloor = 1e-6;

struct ModelConfig {
  std::vector<int> hidden{64, 64};
  /// false degrades A, B, C, o to global constants (trunk sees a zero input).
  bool state_dependent_jacobians = true;
  /// Starts the trunk with A = I so the untrained model predicts s' = s.
  bool identity_init = true;
  /// Input covariance is (input_std)^2 I.
  double input_std = 0.01;
};

/// Columns are samples: states 4xN, actions 2xN, next 4xN.
struct TransitionBatch {
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::MatrixXd next;

  Eigen::Index size() const { return states.cols(); }
};

/// Local bilinear expansion f = A s + (a_1 B^1 + a_2 B^2) s + C a + o.
struct BilinearTerms {
  Eigen::Matrix4d a;
  std::array<Eigen::Matrix4d, 2> b;
  Eigen::Matrix<double, 4, 2> c;
  Eigen::Vector4d o;

  /// Unpacks one 60-row trunk output column.
  static BilinearTerms from_column(const Eigen::Ref<const Eigen::VectorXd>& col);
  Eigen::Matrix4d jacobian(const Eigen::Vector2d& action) const;
  Eigen::Vector4d mean(const Eigen::Vector4d& s, const Eigen::Vector2d& action) const;
};

class ForwardModel {
 public:
  static constexpr int kTrunkOutputs = 60;

  ForwardModel() = default;
  ForwardModel(const ModelConfig& config, std::uint64_t seed);

  ParamSet params;

  /// 60xN trunk outputs for the given 4xN states.
  Eigen::MatrixXd trunk(const Eigen::MatrixXd& states, MlpCache* cache = nullptr) const;
  void trunk_backward(const MlpCache& cache, const Eigen::MatrixXd& grad_out);
  const Eigen::Matrix4d& input_cov() const { return input_cov_; }
  bool state_dependent() const { return state_dependent_; }

 private:
  Mlp net_;
  Eigen::Matrix4d input_cov_ = Eigen::Matrix4d::Identity();
  bool state_dependent_ = true;
};

Eigen::Vector4d fm_mean(const ForwardModel& fm, const State& s, const Eigen::Vector2d& a);
/// Batched mean prediction, 4xN.
Eigen::MatrixXd fm_mean(const ForwardModel& fm, const Eigen::MatrixXd& states,
                        const Eigen::MatrixXd& actions);
/// N(f(a, s), J Sigma J^T + eps I) with J = A + sum_i a_i B^i.
Gaussian4 fm_dist(const ForwardModel& fm, const State& s, const Eigen::Vector2d& a);
Gaussian4 fm_dist(const BilinearTerms& terms, const Eigen::Matrix4d& input_cov,
                  const Eigen::Vector4d& s, const Eigen::Vector2d& a);

/// Mean over the batch of |s' - f(a, s)|^2. Accumulates dL/dtheta when asked.
double fm_loss(ForwardModel& fm, const TransitionBatch& batch, bool with_grad);
/// Per-sample squared errors without gradients.
Eigen::VectorXd fm_sample_errors(const ForwardModel& fm, const TransitionBatch& batch);

// ---------------------------------------------------------------------------

struct MetaOutput {
  Eigen::Vector4d mean;
  HouseholderCovParams4 cov_params;
};

class MetaModel {
 public:
  static constexpr int kOutputs = 12;  // mean offset, raw scales, direction

  MetaModel() = default;
  MetaModel(const ModelConfig& config, std::uint64_t seed);

  ParamSet params;

  Eigen::MatrixXd raw(const Eigen::MatrixXd& states, MlpCache* cache = nullptr) const;
  void raw_backward(const MlpCache& cache, const Eigen::MatrixXd& grad_out);

 private:
  Mlp net_;
};

double softplus(double x);
double sigmoid(double x);

/// mean = s + raw[0:4], d = softplus(raw[4:8]) + 1e-6, v = raw[8:12].
MetaOutput meta_output(const Eigen::Vector4d& s, const Eigen::Ref<const Eigen::VectorXd>& raw);
Gaussian4 mm_dist(const MetaModel& mm, const State& s);
Gaussian4 meta_gaussian(const MetaOutput& out);

/// D_KL[P(s'|a,s;theta) || Q(s'|s;psi)].
double devaluation_objective(const ForwardModel& fm, const MetaModel& mm, const State& s,
                             const Eigen::Vector2d& a);

/// Per-sample devaluation objective over a batch (next states ignored).
Eigen::VectorXd devaluation_values(const ForwardModel& fm, const MetaModel& mm,
                                   const TransitionBatch& batch);

/// sum_b w_b KL_b / N. Gradients flow into psi only; the forward model is a
/// constant here. Empty `weights` means all ones.
double devaluation_loss(const ForwardModel& fm, MetaModel& mm, const TransitionBatch& batch,
                        const Eigen::VectorXd& weights, bool with_grad);

struct MetaUpdateReport {
  Eigen::VectorXd weights;  // applied weights, 0 for dropped samples
  int dropped = 0;
  double loss_before = 0.0;
};

inline constexpr double kRatioClipLow = 0.1;
inline constexpr double kRatioClipHigh = 10.0;

double clip_density_ratio(double ratio);

/// Density ratio P(s'|a,s;theta_new) / P(s'|a,s;theta_old), clipped to
/// [0.1, 10]; NaN when the ratio is not finite.
double density_ratio_weight(const ForwardModel& fm_old, const ForwardModel& fm_new,
                            const State& s, const Eigen::Vector2d& a, const State& s_next);

/// One optimizer step on the ratio-weighted devaluation objective.
MetaUpdateReport mm_update_weighted(MetaModel& mm, const ForwardModel& fm_old,
                                    const ForwardModel& fm_new, const TransitionBatch& batch,
                                    double rate, Optimizer& optimizer);

// ---------------------------------------------------------------------------

class ValueNet {
 public:
  ValueNet() = default;
  ValueNet(const ModelConfig& config, std::uint64_t seed);

  ParamSet params;

  /// 1xN values.
  Eigen::RowVectorXd values(const Eigen::MatrixXd& states, MlpCache* cache = nullptr) const;
  double value(const State& s) const;
  void backward(const MlpCache& cache, const Eigen::RowVectorXd& grad_out);

 private:
  Mlp net_;
};

/// mean_b w_b / 2 (y_b - V(s_b))^2.
double value_loss(ValueNet& vn, const Eigen::MatrixXd& states, const Eigen::VectorXd& targets,
                  const Eigen::VectorXd& weights, bool with_grad);

class PolicyNet {
 public:
  PolicyNet() = default;
  PolicyNet(const ModelConfig& config, std::uint64_t seed);

  ParamSet params;

  /// 121xN logits.
  Eigen::MatrixXd logits(const Eigen::MatrixXd& states, MlpCache* cache = nullptr) const;
  void backward(const MlpCache& cache, const Eigen::MatrixXd& grad_logits);

 private:
  Mlp net_;
};

/// Column-wise softmax.
Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits);
Eigen::VectorXd policy_probs(const PolicyNet& p, const State& s);
Eigen::MatrixXd policy_probs(const PolicyNet& p, const Eigen::MatrixXd& states);

/// -mean_b w_b sum_a pi(a|s_b) q(a, s_b). `action_values` is 121xN and is
/// treated as constant with respect to the policy parameters.
double policy_loss(PolicyNet& p, const Eigen::MatrixXd& states, const Eigen::MatrixXd& action_values,
                   const Eigen::VectorXd& weights, bool with_grad);

/// Stacks states into a 4xN matrix.
Eigen::MatrixXd state_matrix(const std::vector<State>& states);

}  // namespace hhvg

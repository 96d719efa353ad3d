#pragma once

// The outer learning loop: act, remember, fit the forward model, evaluate
// the policy, devalue, improve the policy. Five pruning variants switch
// individual components off.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "hhvg/diffnet.hpp"
#include "hhvg/env.hpp"
#include "hhvg/models.hpp"

namespace hhvg {

enum class VariantTag { cb, cpe, pgirs, pggr, prw };

/// Which components a variant trains or consults.
struct VariantSpec {
  VariantTag tag = VariantTag::cb;
  bool forward_model = true;
  bool action_policy = true;
  bool intrinsic_reward = true;  // reward computed from the agent's own models
  bool external_reward = false;  // reward replayed from another run
  bool value_function = true;
  bool meta_model = true;

  static VariantSpec of(VariantTag tag);
  /// Accepts "cb", "cpe", "pgirs", "pggr", "prw" or the slash labels.
  static VariantSpec parse(std::string_view name);
  std::string_view key() const;
  std::string_view label() const;
  bool uniform_policy() const { return !action_policy; }
};

const std::vector<VariantTag>& all_variants();

struct Transition {
  State s;
  int a_index = 0;
  Eigen::Vector2d a = Eigen::Vector2d::Zero();
  double behavior_prob = 1.0;
  State s_next;
  std::int64_t t = 0;
};

/// Replay memory. Capacity 0 keeps every transition.
class ExperiencePool {
 public:
  explicit ExperiencePool(std::uint64_t seed = 0, std::size_t capacity = 0);

  void insert(const Transition& tr);
  /// Reverts the most recent insert, restoring any evicted item.
  void undo_insert();
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  /// Storage order, not insertion order, once the ring wraps.
  const Transition& operator[](std::size_t i) const { return items_[i]; }

  /// Whole pool when it holds at most `n` items, otherwise `n` uniform draws
  /// with replacement.
  std::vector<std::size_t> sample_indices(std::size_t n);
  TransitionBatch batch(const std::vector<std::size_t>& indices) const;

  std::mt19937_64& rng() { return rng_; }

 private:
  std::vector<Transition> items_;
  std::size_t capacity_;
  std::size_t next_slot_ = 0;
  std::int64_t last_t_ = INT64_MIN;
  bool frozen_ = false;
  std::mt19937_64 rng_;
  struct Undo {
    bool evicted = false;
    std::size_t slot = 0;
    Transition old;
    std::int64_t last_t = INT64_MIN;
    std::size_t next_slot = 0;
  };
  std::optional<Undo> undo_;
};

/// Intrinsic reward samples keyed by the step at which they were produced.
class RewardDatabase {
 public:
  void record(std::int64_t step, double value);
  void truncate(std::size_t count);
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }
  std::size_t size() const { return log_.size(); }
  bool empty() const { return log_.empty(); }
  const std::vector<std::pair<std::int64_t, double>>& records() const { return log_; }

  /// Uniform draw among samples stamped `step`; falls back to the nearest
  /// stamp (earlier on ties) and reports it through `fallback`.
  double draw(std::int64_t step, std::mt19937_64& rng, bool* fallback = nullptr) const;

  /// u64 count, then (step, value) float64 pairs.
  void save(const std::filesystem::path& path) const;
  static RewardDatabase load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::int64_t, double>> log_;
  std::map<std::int64_t, std::vector<double>> by_step_;
  bool frozen_ = false;
};

struct AgentConfig {
  double gamma = 0.9;
  int fpe_updates = 4;   // M
  int clone_every = 50;  // C
  int batch_size = 128;
  /// States per policy update; 0 uses batch_size.
  int policy_batch = 0;
  double lr_fm = 1e-3;
  double lr_mm = 1e-3;
  double lr_vf = 1e-3;
  double lr_ap = 1e-4;
  double random_reward_std = 0.01;
  std::size_t pool_capacity = 0;
  OptimizerConfig optimizer;
  ModelConfig model;

  void validate() const;
};

/// Gradient step counters for theta, psi, nu and phi.
struct StepCounters {
  std::uint64_t l = 0;
  std::uint64_t i = 0;
  std::uint64_t j = 0;
  std::uint64_t k = 0;
};

struct StepReport {
  std::int64_t t = 0;
  State state;  // state after acting
  int action = 0;
  double fm_loss = 0.0;
  double reward = 0.0;  // batch mean reward of the taken actions
  double value_loss = 0.0;
  double policy_objective = 0.0;
  double mm_loss = 0.0;
  int ratio_dropped = 0;
  bool policy_skipped = false;
  bool reward_fallback = false;
};

/// Everything that gradient steps mutate; copied whole for rollback.
struct Learner {
  ForwardModel fm;
  MetaModel mm;
  MetaModel mm_before;  // psi before the latest devaluation
  ValueNet vf;
  ValueNet vf_clone;
  PolicyNet ap;
  Optimizer opt_fm, opt_mm, opt_vf, opt_ap;
  StepCounters counters;
  std::mt19937_64 act_rng;
  std::mt19937_64 reward_rng;
};

// ---------------------------------------------------------------------------

/// L(a,s; psi_before, theta) - L(a,s; psi_after, theta).
double devaluation_progress(const ForwardModel& fm, const MetaModel& mm_before,
                            const MetaModel& mm_after, const State& s, const Eigen::Vector2d& a);

/// Progress for one action per column of `states`.
Eigen::VectorXd devaluation_progress(const ForwardModel& fm, const MetaModel& mm_before,
                                     const MetaModel& mm_after, const Eigen::MatrixXd& states,
                                     const Eigen::MatrixXd& actions);

/// 121xN progress for every grid action at every state.
Eigen::MatrixXd devaluation_progress_all(const ForwardModel& fm, const MetaModel& mm_before,
                                         const MetaModel& mm_after, const Eigen::MatrixXd& states,
                                         const ActionGrid& grid);

/// Per-sample L_fm(theta_old) - L_fm(theta_new) on observed transitions.
Eigen::VectorXd learning_progress(const ForwardModel& fm_old, const ForwardModel& fm_new,
                                  const TransitionBatch& batch);

/// 121xN learning progress. The successor of a counterfactual action is the
/// new model's prediction; the observed action (if given) uses its real s'.
Eigen::MatrixXd learning_progress_all(const ForwardModel& fm_old, const ForwardModel& fm_new,
                                      const TransitionBatch& batch, const ActionGrid& grid,
                                      const std::vector<int>* taken = nullptr);

/// r + gamma * V(s_next; clone).
double value_target(double r, const ValueNet& clone, const State& s_next, double gamma);

/// 121xN successor values V(fm_mean(s, a); nu).
Eigen::MatrixXd successor_values(const ForwardModel& fm, const ValueNet& vf,
                                 const Eigen::MatrixXd& states, const ActionGrid& grid);

class Agent;

/// Intrinsic reward for the states of sampled transitions at the agent's
/// current step. `fallback` reports a nearest-stamp database lookup.
struct RewardProvider {
  /// 121xN, one row per grid action.
  std::function<Eigen::MatrixXd(Agent&, const std::vector<std::size_t>&, bool* fallback)> all_actions;
  /// N, the action stored in each transition.
  std::function<Eigen::VectorXd(Agent&, const std::vector<std::size_t>&, bool* fallback)> taken_actions;
};

/// M value-regression updates with periodic target cloning. Returns the
/// mean weighted loss.
double fitted_policy_evaluation(Agent& agent, int updates);

struct PolicyUpdateReport {
  double objective = 0.0;
  bool skipped = false;
};

/// One ascent step on sum_a pi(a|s) [R(a,s) + gamma V(f(s,a))] using the
/// supplied 121xN reward matrix for the states in `indices`.
PolicyUpdateReport policy_update(Agent& agent, const std::vector<std::size_t>& indices,
                                 const Eigen::MatrixXd& rewards, double rate);

class Agent {
 public:
  Agent(VariantSpec variant, AgentConfig config, EnvConfig env, std::uint64_t seed,
        const RewardDatabase* external_rewards = nullptr);

  const VariantSpec& variant() const { return variant_; }
  const AgentConfig& config() const { return config_; }
  const EnvConfig& env() const { return env_; }
  const ActionGrid& grid() const { return grid_; }
  std::uint64_t seed() const { return seed_; }

  Learner& learner() { return learner_; }
  const Learner& learner() const { return learner_; }
  ExperiencePool& pool() { return pool_; }
  const ExperiencePool& pool() const { return pool_; }
  /// Devaluation progress of every sampled transition (C/B only).
  RewardDatabase& reward_log() { return reward_log_; }
  const State& state() const { return state_; }
  std::int64_t time() const { return t_; }

  /// Action probabilities at `s` under the current behaviour policy.
  Eigen::VectorXd action_probs(const State& s) const;
  const ForwardModel& fm_previous() const { return fm_prev_; }
  const RewardDatabase* external_rewards() const { return external_; }
  const RewardProvider& reward_provider() const { return provider_; }

  /// One iteration of the loop body. Any exception leaves the agent exactly
  /// as it was before the call.
  StepReport step();

 private:
  StepReport step_unguarded();

  VariantSpec variant_;
  AgentConfig config_;
  EnvConfig env_;
  ActionGrid grid_;
  std::uint64_t seed_;
  const RewardDatabase* external_;
  RewardProvider provider_;
  Learner learner_;
  ForwardModel fm_prev_;  // theta before the latest forward-model step
  ExperiencePool pool_;
  RewardDatabase reward_log_;
  State state_;
  std::int64_t t_ = 0;
  bool inserted_ = false;

  friend double fitted_policy_evaluation(Agent&, int);
  friend PolicyUpdateReport policy_update(Agent&, const std::vector<std::size_t>&,
                                          const Eigen::MatrixXd&, double);
};

/// hhvg_step: alias for Agent::step.
inline StepReport hhvg_step(Agent& agent) { return agent.step(); }

/// Reward function selected by the variant's component pattern.
RewardProvider reward_provider_for(const VariantSpec& variant);

}  // namespace hhvg

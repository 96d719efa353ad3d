#include "hhvg/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hhvg/errors.hpp"

namespace hhvg {

namespace {

enum SeedStream : std::uint64_t {
  kFmStream = 1,
  kMmStream,
  kVfStream,
  kApStream,
  kPoolStream,
  kActStream,
  kRewardStream,
};

struct VariantRow {
  VariantTag tag;
  std::string_view key;
  std::string_view label;
};

constexpr VariantRow kVariantRows[] = {
    {VariantTag::cb, "cb", "C/B"},       {VariantTag::cpe, "cpe", "C/PE"},
    {VariantTag::pgirs, "pgirs", "PG/IRS"}, {VariantTag::pggr, "pggr", "PG/GR"},
    {VariantTag::prw, "prw", "P/RW"},
};

const VariantRow& row_of(VariantTag tag) {
  for (const auto& r : kVariantRows) {
    if (r.tag == tag) return r;
  }
  throw ContractViolation("unknown variant tag");
}

std::vector<Eigen::Vector2d> grid_actions(const ActionGrid& grid) {
  std::vector<Eigen::Vector2d> out(static_cast<std::size_t>(grid.count()));
  for (int a = 0; a < grid.count(); ++a) out[static_cast<std::size_t>(a)] = grid.accel(a);
  return out;
}

Eigen::MatrixXd states_of(const ExperiencePool& pool, const std::vector<std::size_t>& indices) {
  Eigen::MatrixXd out(kStateDim, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t b = 0; b < indices.size(); ++b) {
    out.col(static_cast<Eigen::Index>(b)) = pool[indices[b]].s.vec();
  }
  return out;
}

// pi(a_b | s_b; phi) / behaviour probability, held constant.
Eigen::VectorXd importance_weights(const Agent& agent, const std::vector<std::size_t>& indices,
                                   const Eigen::MatrixXd& states) {
  const auto& pool = agent.pool();
  const Eigen::Index n = static_cast<Eigen::Index>(indices.size());
  Eigen::VectorXd w(n);
  if (agent.variant().uniform_policy()) {
    for (Eigen::Index b = 0; b < n; ++b) {
      w[b] = (1.0 / kActionCount) / pool[indices[static_cast<std::size_t>(b)]].behavior_prob;
    }
    return w;
  }
  const Eigen::MatrixXd probs = policy_probs(agent.learner().ap, states);
  for (Eigen::Index b = 0; b < n; ++b) {
    const Transition& tr = pool[indices[static_cast<std::size_t>(b)]];
    w[b] = probs(tr.a_index, b) / tr.behavior_prob;
  }
  return w;
}

}  // namespace

// ---------------------------------------------------------------------------

VariantSpec VariantSpec::of(VariantTag tag) {
  VariantSpec v;
  v.tag = tag;
  switch (tag) {
    case VariantTag::cb:
      break;
    case VariantTag::cpe:
      v.meta_model = false;
      break;
    case VariantTag::pgirs:
      v.intrinsic_reward = false;
      v.external_reward = true;
      v.value_function = false;
      v.meta_model = false;
      break;
    case VariantTag::pggr:
      v.intrinsic_reward = false;
      v.value_function = false;
      v.meta_model = false;
      break;
    case VariantTag::prw:
      v.action_policy = false;
      v.intrinsic_reward = false;
      v.value_function = false;
      v.meta_model = false;
      break;
  }
  return v;
}

VariantSpec VariantSpec::parse(std::string_view name) {
  for (const auto& r : kVariantRows) {
    if (name == r.key || name == r.label) return of(r.tag);
  }
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

std::string_view VariantSpec::key() const { return row_of(tag).key; }
std::string_view VariantSpec::label() const { return row_of(tag).label; }

const std::vector<VariantTag>& all_variants() {
  static const std::vector<VariantTag> tags{VariantTag::cb, VariantTag::cpe, VariantTag::pgirs,
                                            VariantTag::pggr, VariantTag::prw};
  return tags;
}

// ---------------------------------------------------------------------------

ExperiencePool::ExperiencePool(std::uint64_t seed, std::size_t capacity)
    : capacity_(capacity), rng_(seed) {}

void ExperiencePool::insert(const Transition& tr) {
  require(!frozen_, "ExperiencePool: insert into a frozen pool");
  require(tr.behavior_prob > 0.0 && tr.behavior_prob <= 1.0,
          "ExperiencePool: behavior_prob must lie in (0, 1]");
  require(tr.t > last_t_, "ExperiencePool: step stamps must strictly increase");
  Undo undo;
  undo.last_t = last_t_;
  undo.next_slot = next_slot_;
  if (capacity_ > 0 && items_.size() == capacity_) {
    undo.evicted = true;
    undo.slot = next_slot_;
    undo.old = items_[next_slot_];
    items_[next_slot_] = tr;
    next_slot_ = (next_slot_ + 1) % capacity_;
  } else {
    items_.push_back(tr);
    if (capacity_ > 0) next_slot_ = items_.size() % capacity_;
  }
  last_t_ = tr.t;
  undo_ = undo;
}

void ExperiencePool::undo_insert() {
  require(undo_.has_value(), "ExperiencePool: nothing to undo");
  if (undo_->evicted) {
    items_[undo_->slot] = undo_->old;
  } else {
    items_.pop_back();
  }
  last_t_ = undo_->last_t;
  next_slot_ = undo_->next_slot;
  undo_.reset();
}

std::vector<std::size_t> ExperiencePool::sample_indices(std::size_t n) {
  require(!items_.empty(), "ExperiencePool: sampling from an empty pool");
  require(n > 0, "ExperiencePool: sample size must be positive");
  std::vector<std::size_t> out;
  if (items_.size() <= n) {
    out.resize(items_.size());
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(pick(rng_));
  return out;
}

TransitionBatch ExperiencePool::batch(const std::vector<std::size_t>& indices) const {
  const auto n = static_cast<Eigen::Index>(indices.size());
  TransitionBatch b{Eigen::MatrixXd(kStateDim, n), Eigen::MatrixXd(kActionDim, n),
                    Eigen::MatrixXd(kStateDim, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& tr = items_.at(indices[static_cast<std::size_t>(i)]);
    b.states.col(i) = tr.s.vec();
    b.actions.col(i) = tr.a;
    b.next.col(i) = tr.s_next.vec();
  }
  return b;
}

// ---------------------------------------------------------------------------

void RewardDatabase::record(std::int64_t step, double value) {
  require(!frozen_, "RewardDatabase: record into a frozen database");
  log_.emplace_back(step, value);
  by_step_[step].push_back(value);
}

void RewardDatabase::truncate(std::size_t count) {
  require(!frozen_, "RewardDatabase: truncate a frozen database");
  while (log_.size() > count) {
    auto it = by_step_.find(log_.back().first);
    it->second.pop_back();
    if (it->second.empty()) by_step_.erase(it);
    log_.pop_back();
  }
}

double RewardDatabase::draw(std::int64_t step, std::mt19937_64& rng, bool* fallback) const {
  if (by_step_.empty()) throw DependencyError("RewardDatabase: no recorded rewards to draw from");
  auto it = by_step_.find(step);
  if (it == by_step_.end()) {
    auto above = by_step_.lower_bound(step);
    if (above == by_step_.end()) {
      it = std::prev(above);
    } else if (above == by_step_.begin()) {
      it = above;
    } else {
      auto below = std::prev(above);
      it = (step - below->first <= above->first - step) ? below : above;
    }
    if (fallback) *fallback = true;
  }
  const auto& values = it->second;
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  return values[pick(rng)];
}

void RewardDatabase::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write reward database " + path.string());
  const std::uint64_t count = log_.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& [step, value] : log_) {
    const double pair[2] = {static_cast<double>(step), value};
    out.write(reinterpret_cast<const char*>(pair), sizeof(pair));
  }
  if (!out) throw std::runtime_error("short write to reward database " + path.string());
}

RewardDatabase RewardDatabase::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("missing reward database " + path.string());
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  RewardDatabase db;
  for (std::uint64_t i = 0; i < count; ++i) {
    double pair[2];
    in.read(reinterpret_cast<char*>(pair), sizeof(pair));
    if (!in) throw DependencyError("truncated reward database " + path.string());
    db.record(static_cast<std::int64_t>(pair[0]), pair[1]);
  }
  db.freeze();
  return db;
}

// ---------------------------------------------------------------------------

void AgentConfig::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("agent config: ") + what);
  };
  check(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  check(fpe_updates >= 1, "fpe_updates must be >= 1");
  check(clone_every >= 1, "clone_every must be >= 1");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(policy_batch >= 0, "policy_batch must be >= 0");
  check(lr_fm >= 0.0 && lr_mm >= 0.0 && lr_vf >= 0.0 && lr_ap >= 0.0,
        "learning rates must be non-negative");
  check(random_reward_std > 0.0, "random_reward_std must be positive");
  check(model.input_std > 0.0, "model.input_std must be positive");
  check(!model.hidden.empty(), "model.hidden must list at least one layer");
  for (int h : model.hidden) check(h >= 1, "model.hidden sizes must be positive");
}

// ---------------------------------------------------------------------------

double devaluation_progress(const ForwardModel& fm, const MetaModel& mm_before,
                            const MetaModel& mm_after, const State& s, const Eigen::Vector2d& a) {
  const Gaussian4 p = fm_dist(fm, s, a);
  return gaussian_kl(p, mm_dist(mm_before, s)) - gaussian_kl(p, mm_dist(mm_after, s));
}

Eigen::VectorXd devaluation_progress(const ForwardModel& fm, const MetaModel& mm_before,
                                     const MetaModel& mm_after, const Eigen::MatrixXd& states,
                                     const Eigen::MatrixXd& actions) {
  const Eigen::Index n = states.cols();
  require(actions.rows() == kActionDim && actions.cols() == n,
          "devaluation_progress: actions must be 2xN matching states");
  const Eigen::MatrixXd trunk = fm.trunk(states);
  const Eigen::MatrixXd raw_before = mm_before.raw(states);
  const Eigen::MatrixXd raw_after = mm_after.raw(states);
  Eigen::VectorXd out(n);
  for (Eigen::Index b = 0; b < n; ++b) {
    const Eigen::Vector4d s = states.col(b);
    const Gaussian4 p =
        fm_dist(BilinearTerms::from_column(trunk.col(b)), fm.input_cov(), s, actions.col(b));
    out[b] = gaussian_kl(p, meta_gaussian(meta_output(s, raw_before.col(b)))) -
             gaussian_kl(p, meta_gaussian(meta_output(s, raw_after.col(b))));
  }
  return out;
}

Eigen::MatrixXd devaluation_progress_all(const ForwardModel& fm, const MetaModel& mm_before,
                                         const MetaModel& mm_after, const Eigen::MatrixXd& states,
                                         const ActionGrid& grid) {
  const Eigen::Index n = states.cols();
  const auto actions = grid_actions(grid);
  const Eigen::MatrixXd trunk = fm.trunk(states);
  const Eigen::MatrixXd raw_before = mm_before.raw(states);
  const Eigen::MatrixXd raw_after = mm_after.raw(states);
  Eigen::MatrixXd out(grid.count(), n);
  for (Eigen::Index b = 0; b < n; ++b) {
    const Eigen::Vector4d s = states.col(b);
    const BilinearTerms terms = BilinearTerms::from_column(trunk.col(b));
    const KlReference<4> before(meta_gaussian(meta_output(s, raw_before.col(b))));
    const KlReference<4> after(meta_gaussian(meta_output(s, raw_after.col(b))));
    for (int a = 0; a < grid.count(); ++a) {
      const Gaussian4 p = fm_dist(terms, fm.input_cov(), s, actions[static_cast<std::size_t>(a)]);
      out(a, b) = before.divergence_from(p) - after.divergence_from(p);
    }
  }
  return out;
}

Eigen::VectorXd learning_progress(const ForwardModel& fm_old, const ForwardModel& fm_new,
                                  const TransitionBatch& batch) {
  return fm_sample_errors(fm_old, batch) - fm_sample_errors(fm_new, batch);
}

Eigen::MatrixXd learning_progress_all(const ForwardModel& fm_old, const ForwardModel& fm_new,
                                      const TransitionBatch& batch, const ActionGrid& grid,
                                      const std::vector<int>* taken) {
  const Eigen::Index n = batch.size();
  require(taken == nullptr || taken->size() == static_cast<std::size_t>(n),
          "learning_progress_all: one taken action per sample");
  const auto actions = grid_actions(grid);
  const Eigen::MatrixXd old_trunk = fm_old.trunk(batch.states);
  const Eigen::MatrixXd new_trunk = fm_new.trunk(batch.states);
  Eigen::MatrixXd out(grid.count(), n);
  for (Eigen::Index b = 0; b < n; ++b) {
    const Eigen::Vector4d s = batch.states.col(b);
    const BilinearTerms told = BilinearTerms::from_column(old_trunk.col(b));
    const BilinearTerms tnew = BilinearTerms::from_column(new_trunk.col(b));
    for (int a = 0; a < grid.count(); ++a) {
      const auto& act = actions[static_cast<std::size_t>(a)];
      out(a, b) = (tnew.mean(s, act) - told.mean(s, act)).squaredNorm();
    }
    if (taken) {
      const int a = (*taken)[static_cast<std::size_t>(b)];
      const Eigen::Vector2d act = batch.actions.col(b);
      const Eigen::Vector4d target = batch.next.col(b);
      out(a, b) = (target - told.mean(s, act)).squaredNorm() -
                  (target - tnew.mean(s, act)).squaredNorm();
    }
  }
  return out;
}

double value_target(double r, const ValueNet& clone, const State& s_next, double gamma) {
  return r + gamma * clone.value(s_next);
}

Eigen::MatrixXd successor_values(const ForwardModel& fm, const ValueNet& vf,
                                 const Eigen::MatrixXd& states, const ActionGrid& grid) {
  const Eigen::Index n = states.cols();
  const int count = grid.count();
  const auto actions = grid_actions(grid);
  const Eigen::MatrixXd trunk = fm.trunk(states);
  Eigen::MatrixXd out(count, n);
  // small chunks keep the hidden activations cache-resident
  constexpr Eigen::Index kChunk = 8;
  Eigen::MatrixXd successors(kStateDim, count * kChunk);
  for (Eigen::Index first = 0; first < n; first += kChunk) {
    const Eigen::Index width = std::min(kChunk, n - first);
    successors.resize(kStateDim, count * width);
    for (Eigen::Index b = 0; b < width; ++b) {
      const Eigen::Vector4d s = states.col(first + b);
      const BilinearTerms terms = BilinearTerms::from_column(trunk.col(first + b));
      for (int a = 0; a < count; ++a) {
        successors.col(b * count + a) = terms.mean(s, actions[static_cast<std::size_t>(a)]);
      }
    }
    const Eigen::RowVectorXd v = vf.values(successors);
    out.middleCols(first, width) = Eigen::Map<const Eigen::MatrixXd>(v.data(), count, width);
  }
  return out;
}

// ---------------------------------------------------------------------------

RewardProvider reward_provider_for(const VariantSpec& variant) {
  RewardProvider p;
  switch (variant.tag) {
    case VariantTag::cb:
      p.all_actions = [](Agent& ag, const std::vector<std::size_t>& idx, bool*) {
        const auto& l = ag.learner();
        return devaluation_progress_all(l.fm, l.mm_before, l.mm, states_of(ag.pool(), idx),
                                        ag.grid());
      };
      p.taken_actions = [](Agent& ag, const std::vector<std::size_t>& idx, bool*) {
        const auto& l = ag.learner();
        const TransitionBatch b = ag.pool().batch(idx);
        return devaluation_progress(l.fm, l.mm_before, l.mm, b.states, b.actions);
      };
      break;
    case VariantTag::cpe:
      p.all_actions = [](Agent& ag, const std::vector<std::size_t>& idx, bool*) {
        std::vector<int> taken;
        taken.reserve(idx.size());
        for (std::size_t i : idx) taken.push_back(ag.pool()[i].a_index);
        return learning_progress_all(ag.fm_previous(), ag.learner().fm, ag.pool().batch(idx),
                                     ag.grid(), &taken);
      };
      p.taken_actions = [](Agent& ag, const std::vector<std::size_t>& idx, bool*) {
        return learning_progress(ag.fm_previous(), ag.learner().fm, ag.pool().batch(idx));
      };
      break;
    case VariantTag::pgirs: {
      auto fill = [](Agent& ag, Eigen::Index rows, Eigen::Index cols, bool* fallback) {
        const RewardDatabase* db = ag.external_rewards();
        if (db == nullptr) throw DependencyError("PG/IRS needs a recorded C/B reward database");
        Eigen::MatrixXd out(rows, cols);
        bool fb = false;
        for (Eigen::Index j = 0; j < cols; ++j) {
          for (Eigen::Index i = 0; i < rows; ++i) {
            out(i, j) = db->draw(ag.time(), ag.learner().reward_rng, &fb);
          }
        }
        if (fallback && fb) *fallback = true;
        return out;
      };
      p.all_actions = [fill](Agent& ag, const std::vector<std::size_t>& idx, bool* fb) {
        return fill(ag, kActionCount, static_cast<Eigen::Index>(idx.size()), fb);
      };
      p.taken_actions = [fill](Agent& ag, const std::vector<std::size_t>& idx, bool* fb) {
        return Eigen::VectorXd(fill(ag, static_cast<Eigen::Index>(idx.size()), 1, fb));
      };
      break;
    }
    case VariantTag::pggr: {
      auto fill = [](Agent& ag, Eigen::Index rows, Eigen::Index cols) {
        std::normal_distribution<double> noise(0.0, ag.config().random_reward_std);
        Eigen::MatrixXd out(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j) {
          for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = noise(ag.learner().reward_rng);
        }
        return out;
      };
      p.all_actions = [fill](Agent& ag, const std::vector<std::size_t>& idx, bool*) {
        return fill(ag, kActionCount, static_cast<Eigen::Index>(idx.size()));
      };
      p.taken_actions = [fill](Agent& ag, const std::vector<std::size_t>& idx, bool*) {
        return Eigen::VectorXd(fill(ag, static_cast<Eigen::Index>(idx.size()), 1));
      };
      break;
    }
    case VariantTag::prw:
      p.all_actions = [](Agent&, const std::vector<std::size_t>& idx, bool*) {
        return Eigen::MatrixXd::Zero(kActionCount, static_cast<Eigen::Index>(idx.size())).eval();
      };
      p.taken_actions = [](Agent&, const std::vector<std::size_t>& idx, bool*) {
        return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(idx.size())).eval();
      };
      break;
  }
  return p;
}

// ---------------------------------------------------------------------------

double fitted_policy_evaluation(Agent& agent, int updates) {
  require(!agent.pool().empty(), "fitted_policy_evaluation: empty pool");
  require(updates >= 1, "fitted_policy_evaluation: need at least one update");
  Learner& l = agent.learner_;
  const AgentConfig& cfg = agent.config_;
  double total = 0.0;
  for (int m = 0; m < updates; ++m) {
    const auto idx = agent.pool_.sample_indices(static_cast<std::size_t>(cfg.batch_size));
    const TransitionBatch batch = agent.pool_.batch(idx);
    const Eigen::VectorXd rewards = agent.provider_.taken_actions(agent, idx, nullptr);
    const Eigen::VectorXd targets =
        rewards + cfg.gamma * l.vf_clone.values(batch.next).transpose();
    const Eigen::VectorXd weights = importance_weights(agent, idx, batch.states);
    l.vf.params.zero_grad();
    total += value_loss(l.vf, batch.states, targets, weights, true);
    l.opt_vf.step(l.vf.params, cfg.lr_vf);
    ++l.counters.j;
    if (l.counters.j % static_cast<std::uint64_t>(cfg.clone_every) == 0) l.vf_clone = l.vf;
  }
  return total / updates;
}

PolicyUpdateReport policy_update(Agent& agent, const std::vector<std::size_t>& indices,
                                 const Eigen::MatrixXd& rewards, double rate) {
  require(!indices.empty(), "policy_update: empty batch");
  require(rewards.rows() == kActionCount &&
              rewards.cols() == static_cast<Eigen::Index>(indices.size()),
          "policy_update: rewards must be 121xN");
  Learner& l = agent.learner_;
  const Eigen::MatrixXd states = states_of(agent.pool_, indices);
  Eigen::MatrixXd q = rewards;
  if (agent.variant_.value_function) {
    q += agent.config_.gamma * successor_values(l.fm, l.vf, states, agent.grid_);
  }
  PolicyUpdateReport report;
  if (!q.allFinite()) {
    report.skipped = true;
    return report;
  }
  const Eigen::VectorXd weights = importance_weights(agent, indices, states);
  l.ap.params.zero_grad();
  try {
    report.objective = -policy_loss(l.ap, states, q, weights, true);
  } catch (const NumericalDomainError&) {
    l.ap.params.zero_grad();
    report.skipped = true;
    return report;
  }
  l.opt_ap.step(l.ap.params, rate);
  ++l.counters.k;
  return report;
}

// ---------------------------------------------------------------------------

Agent::Agent(VariantSpec variant, AgentConfig config, EnvConfig env, std::uint64_t seed,
             const RewardDatabase* external_rewards)
    : variant_(variant),
      config_(std::move(config)),
      env_(std::move(env)),
      grid_(env_),
      seed_(seed),
      external_(external_rewards),
      provider_(reward_provider_for(variant)),
      pool_(derive_seed(seed, kPoolStream), config_.pool_capacity) {
  config_.validate();
  env_.validate();
  if (variant_.external_reward && (external_ == nullptr || external_->empty())) {
    throw DependencyError("variant " + std::string(variant_.label()) +
                          " needs the reward database of a completed C/B run");
  }
  learner_.fm = ForwardModel(config_.model, derive_seed(seed, kFmStream));
  learner_.mm = MetaModel(config_.model, derive_seed(seed, kMmStream));
  learner_.mm_before = learner_.mm;
  learner_.vf = ValueNet(config_.model, derive_seed(seed, kVfStream));
  learner_.vf_clone = learner_.vf;
  learner_.ap = PolicyNet(config_.model, derive_seed(seed, kApStream));
  learner_.opt_fm = learner_.opt_mm = learner_.opt_vf = learner_.opt_ap =
      Optimizer(config_.optimizer);
  learner_.act_rng.seed(derive_seed(seed, kActStream));
  learner_.reward_rng.seed(derive_seed(seed, kRewardStream));
  fm_prev_ = learner_.fm;
  state_ = env_.start_state();
}

Eigen::VectorXd Agent::action_probs(const State& s) const {
  if (variant_.uniform_policy()) {
    return Eigen::VectorXd::Constant(grid_.count(), 1.0 / grid_.count());
  }
  return policy_probs(learner_.ap, s);
}

StepReport Agent::step() {
  const Learner saved_learner = learner_;
  const ForwardModel saved_prev = fm_prev_;
  const State saved_state = state_;
  const std::int64_t saved_t = t_;
  const std::size_t saved_log = reward_log_.size();
  const auto saved_pool_rng = pool_.rng();
  inserted_ = false;
  try {
    return step_unguarded();
  } catch (...) {
    learner_ = saved_learner;
    fm_prev_ = saved_prev;
    state_ = saved_state;
    t_ = saved_t;
    reward_log_.truncate(saved_log);
    if (inserted_) pool_.undo_insert();
    pool_.rng() = saved_pool_rng;
    throw;
  }
}

StepReport Agent::step_unguarded() {
  Learner& l = learner_;
  StepReport rep;
  rep.t = t_;

  const Eigen::VectorXd probs = action_probs(state_);
  std::discrete_distribution<int> choose(probs.data(), probs.data() + probs.size());
  const int action = choose(l.act_rng);
  const State next = hhvg::step(state_, action, env_);
  pool_.insert({state_, action, grid_.accel(action), probs[action], next, t_});
  inserted_ = true;
  rep.action = action;
  rep.state = next;
  state_ = next;

  const auto idx = pool_.sample_indices(static_cast<std::size_t>(config_.batch_size));
  const TransitionBatch batch = pool_.batch(idx);

  fm_prev_ = l.fm;
  l.fm.params.zero_grad();
  rep.fm_loss = fm_loss(l.fm, batch, true);
  l.opt_fm.step(l.fm.params, config_.lr_fm);
  ++l.counters.l;

  if (variant_.value_function) rep.value_loss = fitted_policy_evaluation(*this, config_.fpe_updates);

  if (variant_.meta_model) {
    l.mm_before = l.mm;
    const MetaUpdateReport mu = mm_update_weighted(l.mm, fm_prev_, l.fm, batch, config_.lr_mm, l.opt_mm);
    rep.mm_loss = mu.loss_before;
    rep.ratio_dropped = mu.dropped;
    ++l.counters.i;
  }

  bool fallback = false;
  const Eigen::VectorXd taken = provider_.taken_actions(*this, idx, &fallback);
  rep.reward = taken.mean();
  if (variant_.tag == VariantTag::cb) {
    for (Eigen::Index b = 0; b < taken.size(); ++b) reward_log_.record(t_, taken[b]);
  }

  if (variant_.action_policy) {
    std::vector<std::size_t> pidx = idx;
    if (config_.policy_batch > 0 && pidx.size() > static_cast<std::size_t>(config_.policy_batch)) {
      pidx.resize(static_cast<std::size_t>(config_.policy_batch));
    }
    const Eigen::MatrixXd rewards = provider_.all_actions(*this, pidx, &fallback);
    const PolicyUpdateReport pu = policy_update(*this, pidx, rewards, config_.lr_ap);
    rep.policy_objective = pu.objective;
    rep.policy_skipped = pu.skipped;
  }
  rep.reward_fallback = fallback;
  ++t_;
  return rep;
}

}  // namespace hhvg

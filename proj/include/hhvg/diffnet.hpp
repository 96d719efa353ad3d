#pragma once

// Trainable-parameter storage, a tanh MLP with hand-written backprop,
// optimizers, the plateau learning-rate scheduler and checkpoint files.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace hhvg {

/// splitmix64 of (base, stream); used to derive independent RNG seeds.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

struct ParamEntry {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
};

/// Named trainable arrays with gradient accumulators of the same shape.
class ParamSet {
 public:
  std::size_t add(std::string name, Eigen::MatrixXd value);

  std::size_t index_of(std::string_view name) const;
  ParamEntry& operator[](std::size_t i) { return entries_[i]; }
  const ParamEntry& operator[](std::size_t i) const { return entries_[i]; }
  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t scalar_count() const;

  std::uint64_t step_count() const { return step_count_; }
  void mark_step() { ++step_count_; }
  void set_step_count(std::uint64_t n) { step_count_ = n; }

  void zero_grad();
  double grad_norm() const;
  bool grads_finite() const;
  /// Bitwise comparison of every value array (gradients ignored).
  bool same_values(const ParamSet& other) const;

 private:
  std::vector<ParamEntry> entries_;
  std::uint64_t step_count_ = 0;
};

/// Uniform Glorot/Xavier initialization for a rows x cols weight.
Eigen::MatrixXd xavier_init(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct MlpCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each affine layer
};

/// Fully connected net, tanh on hidden layers, linear output. Samples are
/// columns. The weights live in a ParamSet owned by the enclosing model.
class Mlp {
 public:
  Mlp() = default;
  /// Registers `prefix.w{k}` / `prefix.b{k}` in `params`, Xavier weights and zero biases.
  Mlp(ParamSet& params, const std::string& prefix, std::vector<int> sizes, std::uint64_t seed);

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  std::size_t bias_index(std::size_t layer) const { return layers_[layer].bias; }
  std::size_t layer_count() const { return layers_.size(); }

  Eigen::MatrixXd forward(const ParamSet& params, const Eigen::MatrixXd& x,
                          MlpCache* cache = nullptr) const;
  /// Accumulates dL/dparams into `params` grads given dL/doutput.
  void backward(ParamSet& params, const MlpCache& cache, const Eigen::MatrixXd& grad_out) const;

 private:
  struct Layer {
    std::size_t weight = 0;
    std::size_t bias = 0;
  };
  std::vector<int> sizes_;
  std::vector<Layer> layers_;
};

// ---------------------------------------------------------------------------

/// Loss evaluated at the current values of `params`; when `with_grad` is set
/// it also accumulates analytic gradients into the ParamSet.
using LossFn = std::function<double(ParamSet& params, bool with_grad)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_entry;
  Eigen::Index worst_index = 0;
};

/// Below this magnitude gradients are compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-6;

/// Central finite differences (step 1e-5) against analytic gradients.
/// Relative error per scalar is |a - n| / max(|a|, |n|, kGradCheckFloor).
GradCheckReport grad_check(const LossFn& loss, ParamSet& params, double step = 1e-5);

/// p <- p - rate * grad, optional global-norm clipping, grads cleared.
/// Throws PoisonedUpdateError (params untouched) on non-finite grads.
void sgd_step(ParamSet& params, double rate, double clip_norm = 0.0);

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double clip_norm = 10.0;  // <= 0 disables clipping
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Stateful wrapper so a config switch can pick Adam over plain SGD.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  void step(ParamSet& params, double rate);
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<Eigen::MatrixXd> first_;
  std::vector<Eigen::MatrixXd> second_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------

/// Reduce-on-plateau learning rate.
class LrSchedule {
 public:
  LrSchedule(double base_rate, int plateau_window, double reduction_factor,
             double tolerance = 1e-6);

  /// Feeds one epoch loss; returns the (possibly reduced) rate.
  double plateau_update(double epoch_loss);

  double rate() const { return rate_; }
  double base_rate() const { return base_rate_; }
  int reductions() const { return reductions_; }
  double best_loss() const { return best_loss_; }
  int epochs_since_improvement() const { return since_improvement_; }

 private:
  double base_rate_;
  int window_;
  double factor_;
  double tolerance_;
  double rate_;
  double best_loss_;
  int since_improvement_ = 0;
  int reductions_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: "HHVGCKPT", u32 version, u64 count, then per array
// u32 name length, name bytes, u64 rows, u64 cols, row-major float64.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Eigen::MatrixXd value;
};

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, const ParamSet*>>& sets);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);
/// Copies arrays named `prefix + entry.name` into `params`; shapes must match.
void restore_params(ParamSet& params, const std::string& prefix,
                    const std::vector<NamedArray>& arrays);

}  // namespace hhvg

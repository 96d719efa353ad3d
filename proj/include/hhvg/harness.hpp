#pragma once

// Experiment phases, oracle training, exploration metrics, validation error
// and the rank-sum statistics used to compare variants.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hhvg/agent.hpp"
#include "hhvg/env.hpp"
#include "hhvg/models.hpp"

namespace hhvg {

struct PhasePlan {
  int dap_steps = 30000;
  int postdap_epochs = 30000;
  int batch_size = 128;
  int validate_every = 100;
  int plateau_window = 3000;
  double plateau_factor = 0.1;

  static PhasePlan desk();
  static PhasePlan full();
  void validate() const;
};

/// 50x50 visit counts over positions; counters start at one.
class CoverageGrid {
 public:
  static constexpr int kSide = 50;
  static constexpr int kCells = kSide * kSide;

  CoverageGrid();
  void visit(const Eigen::Vector2d& position);
  static int cell_of(const Eigen::Vector2d& position);

  const std::array<double, kCells>& counts() const { return counts_; }
  int visited_cells() const { return visited_count_; }
  double total() const { return total_; }
  bool visited(int cell) const { return visited_[static_cast<std::size_t>(cell)]; }

 private:
  std::array<double, kCells> counts_;
  std::array<bool, kCells> visited_{};
  int visited_count_ = 0;
  double total_ = kCells;
};

double coverage_rate(const CoverageGrid& grid);
/// Natural-log Shannon entropy of the normalized counters.
double coverage_entropy(const CoverageGrid& grid);

/// Disjoint train/test/validation index sets (0.8 / 0.16 / 0.04).
struct OracleSplit {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> test;
  std::vector<std::uint64_t> validation;

  static OracleSplit make(std::uint64_t row_count, std::uint64_t seed);
};

/// Largest pairwise Euclidean distance between columns, exact O(n^2).
double max_pairwise_distance(const Eigen::MatrixXd& points);

/// Exact maximum over a deterministic subsample of at most `subsample`
/// points plus the per-axis extremes. Independent of column order.
double max_pairwise_distance_estimate(const Eigen::MatrixXd& points, std::size_t subsample = 4096);

/// Held-out transitions with their cached target diameter.
class ValidationSet {
 public:
  ValidationSet() = default;
  explicit ValidationSet(TransitionBatch rows);
  static ValidationSet from_rows(const std::vector<TransitionRow>& rows);

  const TransitionBatch& rows() const { return rows_; }
  double d_max() const { return d_max_; }
  std::size_t size() const { return static_cast<std::size_t>(rows_.size()); }

 private:
  TransitionBatch rows_;
  double d_max_ = 0.0;
};

/// Oracle rows selected by index, without materializing the whole grid.
std::vector<TransitionRow> oracle_rows(const EnvConfig& cfg, const OracleGridSpec& spec,
                                       const std::vector<std::uint64_t>& indices);

struct ValidationScore {
  double mse = 0.0;        // mean squared Euclidean error
  double error_pct = 0.0;  // 100 * RMSE / D_max
};

ValidationScore validate_model(const ForwardModel& fm, const ValidationSet& set);
double error_percentage(const ForwardModel& fm, const ValidationSet& set);

// ---------------------------------------------------------------------------

/// One line of a metric trace. Unmeasured fields hold NaN.
struct RunRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double reward = 0.0;
  double cr = 0.0;
  double ce = 0.0;
  double error_pct = 0.0;
  double val_mse = 0.0;
  double lr = 0.0;
};

struct RunRecord {
  std::vector<RunRow> rows;
  bool failed = false;
  std::string failure;
  /// "numerical", "contract" or "error" for a failed run.
  std::string failure_kind;

  void mark_failed(const std::exception& e);

  /// Last row with a validation measurement.
  std::optional<RunRow> last_validated() const;
};

/// Columns: step, loss, reward, CR, CE, error_pct, val_mse, lr.
void write_run_csv(const std::filesystem::path& path, const RunRecord& record);
RunRecord read_run_csv(const std::filesystem::path& path);

struct DapResult {
  RunRecord record;
  std::unique_ptr<Agent> agent;
  CoverageGrid coverage;
};

/// plan.dap_steps agent steps at constant learning rates.
DapResult run_dap(const VariantSpec& variant, const EnvConfig& env, const AgentConfig& config,
                  const PhasePlan& plan, std::uint64_t seed, const ValidationSet* validation = nullptr,
                  const RewardDatabase* external_rewards = nullptr);

/// Forward-model-only training from the frozen pool with plateau scheduling.
/// Steps continue the DAP clock.
RunRecord run_postdap(Agent& agent, const PhasePlan& plan, const CoverageGrid& coverage,
                      const ValidationSet* validation = nullptr);

struct OracleTraining {
  int epochs = 60000;
  int batch_size = 128;
  double rate = 1e-3;
  int evaluate_every = 100;
  int plateau_window = 3000;
  double plateau_factor = 0.1;
  /// Test rows scored for scheduling; 0 scores the whole test split.
  std::size_t test_eval_rows = 16384;
};

struct OracleResult {
  ForwardModel fm;
  RunRecord record;
  std::vector<double> test_loss;  // one entry per evaluation
};

/// Row `i` of a dataset that may be generated on demand.
using RowSource = std::function<TransitionRow(std::uint64_t)>;

/// Supervised fit on the train split; the rate follows the test loss.
/// `touched` receives every dataset index that entered a gradient.
OracleResult train_oracle(const RowSource& dataset, const OracleSplit& split,
                          const OracleTraining& training, const ModelConfig& model,
                          const OptimizerConfig& optimizer, std::uint64_t seed,
                          const ValidationSet* validation = nullptr,
                          std::vector<std::uint64_t>* touched = nullptr);
OracleResult train_oracle(const std::vector<TransitionRow>& dataset, const OracleSplit& split,
                          const OracleTraining& training, const ModelConfig& model,
                          const OptimizerConfig& optimizer, std::uint64_t seed,
                          const ValidationSet* validation = nullptr,
                          std::vector<std::uint64_t>* touched = nullptr);

// ---------------------------------------------------------------------------

enum class UMethod { automatic, exact, normal };

struct UTestResult {
  double u = 0.0;  // U statistic of x
  double p = 0.0;  // one-sided, x stochastically less than y
  bool exact = false;
  bool ties = false;
};

/// Exact enumeration when the smaller sample has at most 8 values,
/// otherwise the tie- and continuity-corrected normal approximation.
UTestResult mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y,
                           UMethod method = UMethod::automatic);

/// Terminal validation metrics of completed runs of one variant.
struct VariantTerminals {
  std::vector<double> dap_mse;
  std::vector<double> dap_error_pct;
  std::vector<double> postdap_mse;
  std::vector<double> postdap_error_pct;
};

struct SummaryRow {
  std::string variant;
  std::size_t runs = 0;
  double dap_mse_mean = 0.0, dap_mse_sd = 0.0;
  double dap_err_mean = 0.0, dap_err_sd = 0.0;
  double postdap_mse_mean = 0.0, postdap_mse_sd = 0.0;
  double postdap_err_mean = 0.0, postdap_err_sd = 0.0;
};

struct TestRow {
  std::string hypothesis;  // e.g. "C/B < C/PE"
  std::string phase;       // "DAP" or "Post-DAP"
  std::size_t n_x = 0, n_y = 0;
  UTestResult result;
  double alpha = 0.0;
  bool reject = false;
};

struct Comparison {
  std::vector<SummaryRow> summary;
  std::vector<TestRow> tests;
  std::vector<std::string> warnings;
};

/// Summary table plus one-sided tests C/B < C/PE and C/B < PG/IRS on the
/// terminal MSE of both phases. `alpha` is the already corrected level.
Comparison compare_variants(const std::map<std::string, VariantTerminals>& records,
                            double alpha = 0.025);

void write_summary_csv(const std::filesystem::path& path, const Comparison& cmp);
void write_tests_csv(const std::filesystem::path& path, const Comparison& cmp);

}  // namespace hhvg

#pragma once

// Two-dimensional Mountain Car: a point mass in the unit square pushed by
// an 11x11 grid of accelerations and by Gaussian attractor/repeller wells.
// There is no reward channel and no terminal state.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace hhvg {

struct State {
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;

  Eigen::Vector4d vec() const { return {x, y, vx, vy}; }
  Eigen::Vector2d position() const { return {x, y}; }
  static State from(const Eigen::Vector4d& v) { return {v[0], v[1], v[2], v[3]}; }
  bool operator==(const State&) const = default;
};

struct ForceFeature {
  Eigen::Vector2d center;
  double strength = 1.0;
  double width = 0.1;
};

struct EnvConfig {
  std::vector<ForceFeature> attractors;
  std::vector<ForceFeature> repellers;
  double dt = 0.05;
  double damping = 0.01;
  double action_bound = 2.0;
  int grid_size = 11;
  Eigen::Vector2d start{0.10, 0.10};
  /// Velocity interval [-b, b] covered by the oracle grid.
  double oracle_velocity_bound = 1.0;

  /// One attractor at the centre, three repellers in the other quadrants.
  static EnvConfig defaults();
  void validate() const;
  State start_state() const { return {start.x(), start.y(), 0.0, 0.0}; }
};

/// Evenly spaced accelerations per axis; index = ix * size + iy.
class ActionGrid {
 public:
  explicit ActionGrid(int size = 11, double bound = 2.0);
  explicit ActionGrid(const EnvConfig& cfg) : ActionGrid(cfg.grid_size, cfg.action_bound) {}

  int size() const { return size_; }
  int count() const { return size_ * size_; }
  double level(int i) const;
  int index(int ix, int iy) const;
  std::pair<int, int> cell(int index) const;
  Eigen::Vector2d accel(int index) const;

 private:
  int size_;
  double bound_;
};

Eigen::Vector2d external_accel(const Eigen::Vector2d& pos, const EnvConfig& cfg);

/// Semi-implicit Euler step with an arbitrary acceleration; leaving the unit
/// square on any axis clamps the position and zeroes the whole velocity.
State step_accel(const State& s, const Eigen::Vector2d& accel, const EnvConfig& cfg);
State step(const State& s, int action_index, const EnvConfig& cfg);

// ---------------------------------------------------------------------------
// Oracle grid

/// Counts per dimension (x, y, vx, vy, ax, ay). A count of 1 places the
/// single level at the midpoint of that dimension's range.
struct OracleGridSpec {
  std::array<int, 6> counts{49, 49, 11, 11, 11, 11};

  static OracleGridSpec full() { return {}; }
  static OracleGridSpec desk() { return {{17, 17, 7, 7, 7, 7}}; }
  std::uint64_t row_count() const;
};

/// (s:4, a:2, s':4) as stored on disk.
using TransitionRow = std::array<double, 10>;

TransitionRow make_row(const State& s, const Eigen::Vector2d& a, const State& next);
State row_state(const TransitionRow& row);
Eigen::Vector2d row_action(const TransitionRow& row);
State row_next(const TransitionRow& row);

/// Row `index` of the enumeration; x is the slowest dimension, ay the fastest.
TransitionRow oracle_row_at(const EnvConfig& cfg, const OracleGridSpec& spec, std::uint64_t index);

/// Visits rows [begin, end) in enumeration order.
void oracle_grid_enumerate(const EnvConfig& cfg, const OracleGridSpec& spec,
                           const std::function<void(const TransitionRow&)>& sink,
                           std::uint64_t begin = 0, std::uint64_t end = UINT64_MAX);

std::vector<TransitionRow> oracle_dataset(const EnvConfig& cfg, const OracleGridSpec& spec);

/// Binary rows of 10 float64 preceded by a u64 row count.
void write_transition_rows(const std::filesystem::path& path, const std::vector<TransitionRow>& rows);
std::vector<TransitionRow> read_transition_rows(const std::filesystem::path& path);

}  // namespace hhvg

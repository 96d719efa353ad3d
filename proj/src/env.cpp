#include "hhvg/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "hhvg/errors.hpp"

namespace hhvg {

EnvConfig EnvConfig::defaults() {
  EnvConfig cfg;
  cfg.attractors = {{{0.50, 0.50}, 1.5, 0.15}};
  cfg.repellers = {{{0.25, 0.75}, 2.0, 0.10}, {{0.75, 0.75}, 2.0, 0.10}, {{0.75, 0.25}, 2.0, 0.10}};
  return cfg;
}

void EnvConfig::validate() const {
  auto check = [](const ForceFeature& f) {
    require(f.center.x() >= 0.0 && f.center.x() <= 1.0 && f.center.y() >= 0.0 &&
                f.center.y() <= 1.0,
            "EnvConfig: feature centre outside the unit square");
    require(f.strength > 0.0 && f.width > 0.0, "EnvConfig: strength and width must be positive");
  };
  std::for_each(attractors.begin(), attractors.end(), check);
  std::for_each(repellers.begin(), repellers.end(), check);
  require(dt > 0.0, "EnvConfig: dt must be positive");
  require(damping >= 0.0 && damping < 1.0, "EnvConfig: damping must lie in [0, 1)");
  require(action_bound > 0.0, "EnvConfig: action bound must be positive");
  require(grid_size >= 2, "EnvConfig: grid size must be >= 2");
  require(start.x() >= 0.0 && start.x() <= 1.0 && start.y() >= 0.0 && start.y() <= 1.0,
          "EnvConfig: start outside the unit square");
  require(oracle_velocity_bound > 0.0, "EnvConfig: oracle velocity bound must be positive");
}

// ---------------------------------------------------------------------------

ActionGrid::ActionGrid(int size, double bound) : size_(size), bound_(bound) {
  require(size >= 2, "ActionGrid: need at least two levels per axis");
}

double ActionGrid::level(int i) const {
  require(i >= 0 && i < size_, "ActionGrid: level index out of range");
  return -bound_ + 2.0 * bound_ * static_cast<double>(i) / static_cast<double>(size_ - 1);
}

int ActionGrid::index(int ix, int iy) const {
  require(ix >= 0 && ix < size_ && iy >= 0 && iy < size_, "ActionGrid: cell out of range");
  return ix * size_ + iy;
}

std::pair<int, int> ActionGrid::cell(int index) const {
  require(index >= 0 && index < count(), "ActionGrid: action index out of range");
  return {index / size_, index % size_};
}

Eigen::Vector2d ActionGrid::accel(int index) const {
  const auto [ix, iy] = cell(index);
  return {level(ix), level(iy)};
}

// ---------------------------------------------------------------------------

namespace {

void add_wells(const std::vector<ForceFeature>& features, double sign, const Eigen::Vector2d& pos,
               Eigen::Vector2d& out) {
  for (const auto& f : features) {
    const Eigen::Vector2d diff = f.center - pos;
    const double w2 = f.width * f.width;
    out += sign * f.strength * diff / w2 * std::exp(-diff.squaredNorm() / (2.0 * w2));
  }
}

}  // namespace

Eigen::Vector2d external_accel(const Eigen::Vector2d& pos, const EnvConfig& cfg) {
  Eigen::Vector2d out = Eigen::Vector2d::Zero();
  add_wells(cfg.attractors, +1.0, pos, out);
  add_wells(cfg.repellers, -1.0, pos, out);
  return out;
}

State step_accel(const State& s, const Eigen::Vector2d& accel, const EnvConfig& cfg) {
  const Eigen::Vector2d pos = s.position();
  const Eigen::Vector2d total = accel + external_accel(pos, cfg);
  const double keep = 1.0 - cfg.damping;
  State next;
  next.vx = keep * s.vx + total.x() * cfg.dt;
  next.vy = keep * s.vy + total.y() * cfg.dt;
  next.x = s.x + next.vx * cfg.dt;
  next.y = s.y + next.vy * cfg.dt;
  const bool outside = next.x < 0.0 || next.x > 1.0 || next.y < 0.0 || next.y > 1.0;
  if (outside) {
    next.x = std::clamp(next.x, 0.0, 1.0);
    next.y = std::clamp(next.y, 0.0, 1.0);
    next.vx = 0.0;
    next.vy = 0.0;
  }
  return next;
}

State step(const State& s, int action_index, const EnvConfig& cfg) {
  const ActionGrid grid(cfg);
  require(action_index >= 0 && action_index < grid.count(), "step: action index out of range");
  return step_accel(s, grid.accel(action_index), cfg);
}

// ---------------------------------------------------------------------------

std::uint64_t OracleGridSpec::row_count() const {
  std::uint64_t n = 1;
  for (int c : counts) {
    require(c >= 1, "OracleGridSpec: counts must be >= 1");
    n *= static_cast<std::uint64_t>(c);
  }
  return n;
}

TransitionRow make_row(const State& s, const Eigen::Vector2d& a, const State& next) {
  return {s.x, s.y, s.vx, s.vy, a.x(), a.y(), next.x, next.y, next.vx, next.vy};
}

State row_state(const TransitionRow& row) { return {row[0], row[1], row[2], row[3]}; }
Eigen::Vector2d row_action(const TransitionRow& row) { return {row[4], row[5]}; }
State row_next(const TransitionRow& row) { return {row[6], row[7], row[8], row[9]}; }

namespace {

double grid_level(int i, int count, double lo, double hi) {
  if (count == 1) return 0.5 * (lo + hi);
  return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
}

}  // namespace

TransitionRow oracle_row_at(const EnvConfig& cfg, const OracleGridSpec& spec, std::uint64_t index) {
  require(index < spec.row_count(), "oracle_row_at: index out of range");
  const double vb = cfg.oracle_velocity_bound;
  const double ab = cfg.action_bound;
  const std::array<std::pair<double, double>, 6> ranges{
      {{0.0, 1.0}, {0.0, 1.0}, {-vb, vb}, {-vb, vb}, {-ab, ab}, {-ab, ab}}};
  std::array<double, 6> v{};
  for (int d = 5; d >= 0; --d) {
    const auto c = static_cast<std::uint64_t>(spec.counts[d]);
    v[d] = grid_level(static_cast<int>(index % c), spec.counts[d], ranges[d].first,
                      ranges[d].second);
    index /= c;
  }
  const State s{v[0], v[1], v[2], v[3]};
  const Eigen::Vector2d a{v[4], v[5]};
  return make_row(s, a, step_accel(s, a, cfg));
}

void oracle_grid_enumerate(const EnvConfig& cfg, const OracleGridSpec& spec,
                           const std::function<void(const TransitionRow&)>& sink,
                           std::uint64_t begin, std::uint64_t end) {
  end = std::min(end, spec.row_count());
  for (std::uint64_t i = begin; i < end; ++i) sink(oracle_row_at(cfg, spec, i));
}

std::vector<TransitionRow> oracle_dataset(const EnvConfig& cfg, const OracleGridSpec& spec) {
  std::vector<TransitionRow> rows;
  rows.reserve(spec.row_count());
  oracle_grid_enumerate(cfg, spec, [&](const TransitionRow& r) { rows.push_back(r); });
  return rows;
}

void write_transition_rows(const std::filesystem::path& path, const std::vector<TransitionRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  const std::uint64_t count = rows.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& r : rows) {
    out.write(reinterpret_cast<const char*>(r.data()), sizeof(double) * r.size());
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<TransitionRow> read_transition_rows(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in) throw std::runtime_error("truncated row file " + path.string());
  std::vector<TransitionRow> rows(count);
  for (auto& r : rows) {
    in.read(reinterpret_cast<char*>(r.data()), sizeof(double) * r.size());
    if (!in) throw std::runtime_error("truncated row file " + path.string());
  }
  return rows;
}

}  // namespace hhvg

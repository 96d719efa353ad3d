#include "hhvg/diffnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "hhvg/errors.hpp"

namespace hhvg {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------

std::size_t ParamSet::add(std::string name, Eigen::MatrixXd value) {
  require(std::none_of(entries_.begin(), entries_.end(),
                       [&](const ParamEntry& e) { return e.name == name; }),
          "ParamSet: duplicate entry " + name);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  entries_.push_back({std::move(name), std::move(value), std::move(grad)});
  return entries_.size() - 1;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw ContractViolation("ParamSet: no entry named " + std::string(name));
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.grad.setZero();
}

double ParamSet::grad_norm() const {
  double sum = 0.0;
  for (const auto& e : entries_) sum += e.grad.squaredNorm();
  return std::sqrt(sum);
}

bool ParamSet::grads_finite() const {
  return std::all_of(entries_.begin(), entries_.end(),
                     [](const ParamEntry& e) { return e.grad.allFinite(); });
}

bool ParamSet::same_values(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i].value;
    const auto& b = other.entries_[i].value;
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0) {
      return false;
    }
  }
  return true;
}

Eigen::MatrixXd xavier_init(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  require(rows >= 1 && cols >= 1, "xavier_init: both dimensions must be >= 1");
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-bound, bound);
  Eigen::MatrixXd out(rows, cols);
  // fill row-major so the layout of draws is independent of Eigen storage order
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = uniform(rng);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Eigen vectorizes exp but not tanh for double; agrees with std::tanh to a few ulp.
Eigen::MatrixXd fast_tanh(const Eigen::MatrixXd& z) {
  return (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
}

}  // namespace

Mlp::Mlp(ParamSet& params, const std::string& prefix, std::vector<int> sizes, std::uint64_t seed)
    : sizes_(std::move(sizes)) {
  require(sizes_.size() >= 2, "Mlp: need at least input and output sizes");
  for (int s : sizes_) require(s >= 1, "Mlp: layer sizes must be positive");
  for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) {
    Layer layer;
    layer.weight = params.add(prefix + ".w" + std::to_string(k),
                              xavier_init(sizes_[k + 1], sizes_[k], derive_seed(seed, k)));
    layer.bias = params.add(prefix + ".b" + std::to_string(k),
                            Eigen::MatrixXd::Zero(sizes_[k + 1], 1));
    layers_.push_back(layer);
  }
}

Eigen::MatrixXd Mlp::forward(const ParamSet& params, const Eigen::MatrixXd& x,
                             MlpCache* cache) const {
  require(x.rows() == input_size(), "Mlp::forward: input has wrong row count");
  if (cache != nullptr) cache->inputs.clear();
  Eigen::MatrixXd h = x;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    if (cache != nullptr) cache->inputs.push_back(h);
    const auto& w = params[layers_[k].weight].value;
    const auto& b = params[layers_[k].bias].value;
    Eigen::MatrixXd z = w * h;
    z.colwise() += b.col(0);
    if (k + 1 < layers_.size()) {
      h = fast_tanh(z);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

void Mlp::backward(ParamSet& params, const MlpCache& cache, const Eigen::MatrixXd& grad_out) const {
  require(cache.inputs.size() == layers_.size(), "Mlp::backward: cache does not match network");
  Eigen::MatrixXd delta = grad_out;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& input = cache.inputs[k];
    params[layers_[k].weight].grad.noalias() += delta * input.transpose();
    params[layers_[k].bias].grad.col(0) += delta.rowwise().sum();
    if (k == 0) break;
    Eigen::MatrixXd back = params[layers_[k].weight].value.transpose() * delta;
    // input to layer k is tanh output of layer k-1
    delta = (back.array() * (1.0 - input.array().square())).matrix();
  }
}

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const LossFn& loss, ParamSet& params, double step) {
  params.zero_grad();
  const double base = loss(params, true);
  if (!std::isfinite(base)) throw NumericalDomainError("grad_check: loss is not finite");
  std::vector<Eigen::MatrixXd> analytic;
  analytic.reserve(params.entries().size());
  for (const auto& e : params.entries()) analytic.push_back(e.grad);
  params.zero_grad();

  GradCheckReport report;
  for (std::size_t i = 0; i < params.entries().size(); ++i) {
    auto& value = params[i].value;
    for (Eigen::Index j = 0; j < value.size(); ++j) {
      const double saved = value.data()[j];
      value.data()[j] = saved + step;
      const double up = loss(params, false);
      value.data()[j] = saved - step;
      const double down = loss(params, false);
      value.data()[j] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericalDomainError("grad_check: perturbed loss is not finite");
      }
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i].data()[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_entry = params[i].name;
        report.worst_index = j;
      }
    }
  }
  return report;
}

namespace {

double clip_scale(const ParamSet& params, double clip_norm) {
  if (clip_norm <= 0.0) return 1.0;
  const double norm = params.grad_norm();
  return norm > clip_norm ? clip_norm / norm : 1.0;
}

}  // namespace

void sgd_step(ParamSet& params, double rate, double clip_norm) {
  require(rate >= 0.0, "sgd_step: negative learning rate");
  if (!params.grads_finite()) {
    throw PoisonedUpdateError("sgd_step: non-finite gradient, update refused");
  }
  const double scale = clip_scale(params, clip_norm);
  for (auto& e : params.entries()) {
    e.value -= (rate * scale) * e.grad;
    e.grad.setZero();
  }
  params.mark_step();
}

void Optimizer::step(ParamSet& params, double rate) {
  if (config_.kind == OptimizerKind::sgd) {
    sgd_step(params, rate, config_.clip_norm);
    return;
  }
  require(rate >= 0.0, "Optimizer::step: negative learning rate");
  if (!params.grads_finite()) {
    throw PoisonedUpdateError("Optimizer::step: non-finite gradient, update refused");
  }
  auto& entries = params.entries();
  if (first_.size() != entries.size()) {
    first_.clear();
    second_.clear();
    for (const auto& e : entries) {
      first_.push_back(Eigen::MatrixXd::Zero(e.value.rows(), e.value.cols()));
      second_.push_back(Eigen::MatrixXd::Zero(e.value.rows(), e.value.cols()));
    }
  }
  const double scale = clip_scale(params, config_.clip_norm);
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Eigen::MatrixXd g = scale * entries[i].grad;
    first_[i] = config_.beta1 * first_[i] + (1.0 - config_.beta1) * g;
    second_[i] = config_.beta2 * second_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    entries[i].value.array() -=
        rate * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + config_.epsilon);
    entries[i].grad.setZero();
  }
  params.mark_step();
}

// ---------------------------------------------------------------------------

LrSchedule::LrSchedule(double base_rate, int plateau_window, double reduction_factor,
                       double tolerance)
    : base_rate_(base_rate),
      window_(plateau_window),
      factor_(reduction_factor),
      tolerance_(tolerance),
      rate_(base_rate),
      best_loss_(std::numeric_limits<double>::infinity()) {
  require(base_rate > 0.0, "LrSchedule: base rate must be positive");
  require(plateau_window >= 1, "LrSchedule: plateau window must be >= 1");
  require(reduction_factor > 0.0 && reduction_factor < 1.0,
          "LrSchedule: reduction factor must lie in (0, 1)");
}

double LrSchedule::plateau_update(double epoch_loss) {
  if (!std::isfinite(epoch_loss)) {
    throw NumericalDomainError("plateau_update: epoch loss is not finite");
  }
  if (epoch_loss < best_loss_ - tolerance_) {
    best_loss_ = epoch_loss;
    since_improvement_ = 0;
    return rate_;
  }
  if (++since_improvement_ >= window_) {
    rate_ *= factor_;
    ++reductions_;
    since_improvement_ = 0;
  }
  return rate_;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'H', 'H', 'V', 'G', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, const ParamSet*>>& sets) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::uint64_t count = 0;
  for (const auto& [prefix, set] : sets) count += set->entries().size();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod(out, kCheckpointVersion);
  write_pod(out, count);
  for (const auto& [prefix, set] : sets) {
    for (const auto& e : set->entries()) {
      const std::string name = prefix + e.name;
      write_pod(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod(out, static_cast<std::uint64_t>(e.value.rows()));
      write_pod(out, static_cast<std::uint64_t>(e.value.cols()));
      for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
        for (Eigen::Index c = 0; c < e.value.cols(); ++c) write_pod(out, e.value(r, c));
      }
    }
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = read_pod<std::uint64_t>(in);
  std::vector<NamedArray> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = read_pod<std::uint64_t>(in);
    const auto cols = read_pod<std::uint64_t>(in);
    Eigen::MatrixXd value(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      for (Eigen::Index c = 0; c < value.cols(); ++c) value(r, c) = read_pod<double>(in);
    }
    out.push_back({std::move(name), std::move(value)});
  }
  return out;
}

void restore_params(ParamSet& params, const std::string& prefix,
                    const std::vector<NamedArray>& arrays) {
  for (auto& e : params.entries()) {
    const std::string wanted = prefix + e.name;
    auto it = std::find_if(arrays.begin(), arrays.end(),
                           [&](const NamedArray& a) { return a.name == wanted; });
    require(it != arrays.end(), "restore_params: checkpoint lacks " + wanted);
    require(it->value.rows() == e.value.rows() && it->value.cols() == e.value.cols(),
            "restore_params: shape mismatch for " + wanted);
    e.value = it->value;
  }
}

}  // namespace hhvg

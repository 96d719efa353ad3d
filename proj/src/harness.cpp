#include "hhvg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "hhvg/errors.hpp"

namespace hhvg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

TransitionBatch batch_from_rows(const RowSource& rows, const std::vector<std::uint64_t>& indices) {
  const auto n = static_cast<Eigen::Index>(indices.size());
  TransitionBatch b{Eigen::MatrixXd(kStateDim, n), Eigen::MatrixXd(kActionDim, n),
                    Eigen::MatrixXd(kStateDim, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const TransitionRow r = rows(indices[static_cast<std::size_t>(i)]);
    b.states.col(i) << r[0], r[1], r[2], r[3];
    b.actions.col(i) << r[4], r[5];
    b.next.col(i) << r[6], r[7], r[8], r[9];
  }
  return b;
}

// Fixed-width, round-trippable CSV field; NaN is an empty field.
std::string field(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_field(const std::string& s) {
  if (s.empty()) return kNaN;
  return std::stod(s);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return kNaN;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

// ---------------------------------------------------------------------------

PhasePlan PhasePlan::desk() {
  PhasePlan p;
  p.dap_steps = 3000;
  p.postdap_epochs = 3000;
  return p;
}

PhasePlan PhasePlan::full() { return PhasePlan{}; }

void PhasePlan::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("phase plan: ") + what);
  };
  check(dap_steps >= 0, "dap_steps must be >= 0");
  check(postdap_epochs >= 0, "postdap_epochs must be >= 0");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(validate_every >= 1, "validate_every must be >= 1");
  check(plateau_window >= 1, "plateau_window must be >= 1");
  check(plateau_factor > 0.0 && plateau_factor < 1.0, "plateau_factor must lie in (0, 1)");
}

// ---------------------------------------------------------------------------

CoverageGrid::CoverageGrid() { counts_.fill(1.0); }

int CoverageGrid::cell_of(const Eigen::Vector2d& position) {
  auto index = [](double v) {
    const int i = static_cast<int>(std::floor(v * kSide));
    return std::clamp(i, 0, kSide - 1);
  };
  return index(position.x()) * kSide + index(position.y());
}

void CoverageGrid::visit(const Eigen::Vector2d& position) {
  const auto cell = static_cast<std::size_t>(cell_of(position));
  counts_[cell] += 1.0;
  total_ += 1.0;
  if (!visited_[cell]) {
    visited_[cell] = true;
    ++visited_count_;
  }
}

double coverage_rate(const CoverageGrid& grid) {
  return static_cast<double>(grid.visited_cells()) / CoverageGrid::kCells;
}

double coverage_entropy(const CoverageGrid& grid) {
  double h = 0.0;
  for (double c : grid.counts()) {
    const double p = c / grid.total();
    h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

// ---------------------------------------------------------------------------

OracleSplit OracleSplit::make(std::uint64_t row_count, std::uint64_t seed) {
  std::vector<std::uint64_t> order(row_count);
  std::iota(order.begin(), order.end(), std::uint64_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(row_count);
  const auto n_train = static_cast<std::uint64_t>(std::llround(0.8 * n));
  const auto n_test = std::min<std::uint64_t>(static_cast<std::uint64_t>(std::llround(0.16 * n)),
                                              row_count - n_train);
  OracleSplit s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                order.begin() + static_cast<std::ptrdiff_t>(n_train + n_test));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_test), order.end());
  return s;
}

double max_pairwise_distance(const Eigen::MatrixXd& points) {
  const Eigen::Index n = points.cols();
  double best = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd pi = points.col(i);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      best = std::max(best, (points.col(j) - pi).squaredNorm());
    }
  }
  return std::sqrt(best);
}

double max_pairwise_distance_estimate(const Eigen::MatrixXd& points, std::size_t subsample) {
  const auto n = static_cast<std::size_t>(points.cols());
  require(subsample >= 2, "max_pairwise_distance_estimate: subsample must be >= 2");
  if (n <= subsample) return max_pairwise_distance(points);

  // lexicographic order makes the subsample independent of column order
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index r = 0; r < points.rows(); ++r) {
      if (points(r, a) != points(r, b)) return points(r, a) < points(r, b);
    }
    return false;
  });
  std::vector<Eigen::Index> chosen;
  chosen.reserve(subsample + 2 * static_cast<std::size_t>(points.rows()));
  for (std::size_t k = 0; k < subsample; ++k) chosen.push_back(order[k * n / subsample]);
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    Eigen::Index lo = 0, hi = 0;
    points.row(r).minCoeff(&lo);
    points.row(r).maxCoeff(&hi);
    chosen.push_back(lo);
    chosen.push_back(hi);
  }
  Eigen::MatrixXd sub(points.rows(), static_cast<Eigen::Index>(chosen.size()));
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    sub.col(static_cast<Eigen::Index>(k)) = points.col(chosen[k]);
  }
  double best2 = 0.0;
  Eigen::Index end_a = chosen.front(), end_b = chosen.front();
  for (Eigen::Index i = 0; i < sub.cols(); ++i) {
    Eigen::Index j = 0;
    const double d2 = (sub.colwise() - sub.col(i)).colwise().squaredNorm().maxCoeff(&j);
    if (d2 > best2) {
      best2 = d2;
      end_a = chosen[static_cast<std::size_t>(i)];
      end_b = chosen[static_cast<std::size_t>(j)];
    }
  }

  // farthest-point sweeps over the full set from the best pair and the extremes
  double best = std::sqrt(best2);
  std::vector<Eigen::Index> starts{end_a, end_b};
  starts.insert(starts.end(), chosen.end() - 2 * points.rows(), chosen.end());
  for (Eigen::Index cur : starts) {
    for (int sweep = 0; sweep < 4; ++sweep) {
      Eigen::Index next = 0;
      const double d =
          std::sqrt((points.colwise() - points.col(cur)).colwise().squaredNorm().maxCoeff(&next));
      if (d <= best && sweep > 0) break;
      best = std::max(best, d);
      cur = next;
    }
  }
  return best;
}

ValidationSet::ValidationSet(TransitionBatch rows) : rows_(std::move(rows)) {
  require(rows_.size() >= 2, "ValidationSet: need at least two rows");
  d_max_ = max_pairwise_distance_estimate(rows_.next);
  if (!(d_max_ > 0.0)) throw NumericalDomainError("ValidationSet: all targets coincide");
}

ValidationSet ValidationSet::from_rows(const std::vector<TransitionRow>& rows) {
  std::vector<std::uint64_t> all(rows.size());
  std::iota(all.begin(), all.end(), std::uint64_t{0});
  return ValidationSet(batch_from_rows([&](std::uint64_t i) { return rows[i]; }, all));
}

std::vector<TransitionRow> oracle_rows(const EnvConfig& cfg, const OracleGridSpec& spec,
                                       const std::vector<std::uint64_t>& indices) {
  std::vector<TransitionRow> out;
  out.reserve(indices.size());
  for (std::uint64_t i : indices) out.push_back(oracle_row_at(cfg, spec, i));
  return out;
}

ValidationScore validate_model(const ForwardModel& fm, const ValidationSet& set) {
  require(set.size() >= 2, "validate_model: validation set needs at least two rows");
  const double mse = fm_sample_errors(fm, set.rows()).mean();
  return {mse, 100.0 * std::sqrt(mse) / set.d_max()};
}

double error_percentage(const ForwardModel& fm, const ValidationSet& set) {
  return validate_model(fm, set).error_pct;
}

// ---------------------------------------------------------------------------

void RunRecord::mark_failed(const std::exception& e) {
  failed = true;
  failure = e.what();
  if (dynamic_cast<const NumericalDomainError*>(&e)) {
    failure_kind = "numerical";
  } else if (dynamic_cast<const ContractViolation*>(&e)) {
    failure_kind = "contract";
  } else {
    failure_kind = "error";
  }
}

std::optional<RunRow> RunRecord::last_validated() const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (!std::isnan(it->val_mse)) return *it;
  }
  return std::nullopt;
}

void write_run_csv(const std::filesystem::path& path, const RunRecord& record) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,loss,reward,CR,CE,error_pct,val_mse,lr\n";
  for (const RunRow& r : record.rows) {
    out << r.step << ',' << field(r.loss) << ',' << field(r.reward) << ',' << field(r.cr) << ','
        << field(r.ce) << ',' << field(r.error_pct) << ',' << field(r.val_mse) << ','
        << field(r.lr) << '\n';
  }
  if (!out) throw std::runtime_error("short write to " + path.string());
}

RunRecord read_run_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  RunRecord record;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 8) throw std::runtime_error("malformed row in " + path.string());
    RunRow r;
    r.step = std::stoll(cells[0]);
    r.loss = parse_field(cells[1]);
    r.reward = parse_field(cells[2]);
    r.cr = parse_field(cells[3]);
    r.ce = parse_field(cells[4]);
    r.error_pct = parse_field(cells[5]);
    r.val_mse = parse_field(cells[6]);
    r.lr = parse_field(cells[7]);
    record.rows.push_back(r);
  }
  return record;
}

// ---------------------------------------------------------------------------

DapResult run_dap(const VariantSpec& variant, const EnvConfig& env, const AgentConfig& config,
                  const PhasePlan& plan, std::uint64_t seed, const ValidationSet* validation,
                  const RewardDatabase* external_rewards) {
  plan.validate();
  DapResult result;
  result.agent = std::make_unique<Agent>(variant, config, env, seed, external_rewards);
  Agent& agent = *result.agent;
  if (plan.dap_steps == 0) return result;
  result.coverage.visit(agent.state().position());
  result.record.rows.reserve(static_cast<std::size_t>(plan.dap_steps));
  try {
    for (int step = 1; step <= plan.dap_steps; ++step) {
      const StepReport rep = agent.step();
      result.coverage.visit(rep.state.position());
      RunRow row;
      row.step = step;
      row.loss = rep.fm_loss;
      row.reward = rep.reward;
      row.cr = coverage_rate(result.coverage);
      row.ce = coverage_entropy(result.coverage);
      row.error_pct = row.val_mse = kNaN;
      if (validation && (step % plan.validate_every == 0 || step == plan.dap_steps)) {
        const ValidationScore v = validate_model(agent.learner().fm, *validation);
        row.error_pct = v.error_pct;
        row.val_mse = v.mse;
      }
      row.lr = config.lr_fm;
      result.record.rows.push_back(row);
    }
  } catch (const std::exception& e) {
    result.record.mark_failed(e);
  }
  return result;
}

RunRecord run_postdap(Agent& agent, const PhasePlan& plan, const CoverageGrid& coverage,
                      const ValidationSet* validation) {
  plan.validate();
  RunRecord record;
  if (plan.postdap_epochs == 0) return record;
  ExperiencePool& pool = agent.pool();
  require(!pool.empty(), "run_postdap: the experience pool is empty");
  pool.freeze();
  Learner& l = agent.learner();
  LrSchedule schedule(agent.config().lr_fm, plan.plateau_window, plan.plateau_factor);
  const double cr = coverage_rate(coverage);
  const double ce = coverage_entropy(coverage);
  record.rows.reserve(static_cast<std::size_t>(plan.postdap_epochs));
  try {
    for (int epoch = 1; epoch <= plan.postdap_epochs; ++epoch) {
      const auto idx = pool.sample_indices(static_cast<std::size_t>(plan.batch_size));
      const TransitionBatch batch = pool.batch(idx);
      const double rate = schedule.rate();
      l.fm.params.zero_grad();
      const double loss = fm_loss(l.fm, batch, true);
      l.opt_fm.step(l.fm.params, rate);
      schedule.plateau_update(loss);
      RunRow row;
      row.step = static_cast<std::int64_t>(plan.dap_steps) + epoch;
      row.loss = loss;
      row.reward = kNaN;
      row.cr = cr;
      row.ce = ce;
      row.error_pct = row.val_mse = kNaN;
      if (validation && (epoch % plan.validate_every == 0 || epoch == plan.postdap_epochs)) {
        const ValidationScore v = validate_model(l.fm, *validation);
        row.error_pct = v.error_pct;
        row.val_mse = v.mse;
      }
      row.lr = rate;
      record.rows.push_back(row);
    }
  } catch (const std::exception& e) {
    record.mark_failed(e);
  }
  return record;
}

OracleResult train_oracle(const std::vector<TransitionRow>& dataset, const OracleSplit& split,
                          const OracleTraining& training, const ModelConfig& model,
                          const OptimizerConfig& optimizer, std::uint64_t seed,
                          const ValidationSet* validation, std::vector<std::uint64_t>* touched) {
  for (const auto* part : {&split.train, &split.test}) {
    for (auto i : *part) require(i < dataset.size(), "train_oracle: split index out of range");
  }
  return train_oracle([&](std::uint64_t i) { return dataset[i]; }, split, training, model, optimizer,
                      seed, validation, touched);
}

OracleResult train_oracle(const RowSource& dataset, const OracleSplit& split,
                          const OracleTraining& training, const ModelConfig& model,
                          const OptimizerConfig& optimizer, std::uint64_t seed,
                          const ValidationSet* validation, std::vector<std::uint64_t>* touched) {
  require(!split.train.empty() && !split.test.empty(), "train_oracle: empty train or test split");
  require(training.epochs >= 0 && training.batch_size >= 1 && training.evaluate_every >= 1,
          "train_oracle: invalid training schedule");

  OracleResult result{ForwardModel(model, derive_seed(seed, 1)), {}, {}};
  Optimizer opt(optimizer);
  LrSchedule schedule(training.rate, training.plateau_window, training.plateau_factor);
  std::mt19937_64 rng(derive_seed(seed, 2));

  std::vector<std::uint64_t> test_rows = split.test;
  if (training.test_eval_rows > 0 && test_rows.size() > training.test_eval_rows) {
    test_rows.resize(training.test_eval_rows);
  }
  const TransitionBatch test_batch = batch_from_rows(dataset, test_rows);
  auto test_loss = [&] { return fm_sample_errors(result.fm, test_batch).mean(); };

  const bool whole = split.train.size() <= static_cast<std::size_t>(training.batch_size);
  std::uniform_int_distribution<std::size_t> pick(0, split.train.size() - 1);
  std::vector<std::uint64_t> chosen;
  double latest_test = test_loss();
  result.test_loss.push_back(latest_test);
  try {
    for (int epoch = 1; epoch <= training.epochs; ++epoch) {
      if (whole) {
        chosen = split.train;
      } else {
        chosen.resize(static_cast<std::size_t>(training.batch_size));
        for (auto& c : chosen) c = split.train[pick(rng)];
      }
      if (touched) touched->insert(touched->end(), chosen.begin(), chosen.end());
      const TransitionBatch batch = batch_from_rows(dataset, chosen);
      const double rate = schedule.rate();
      result.fm.params.zero_grad();
      const double loss = fm_loss(result.fm, batch, true);
      opt.step(result.fm.params, rate);

      RunRow row;
      row.step = epoch;
      row.loss = loss;
      row.reward = row.cr = row.ce = kNaN;
      row.error_pct = row.val_mse = kNaN;
      row.lr = rate;
      if (epoch % training.evaluate_every == 0 || epoch == training.epochs) {
        latest_test = test_loss();
        result.test_loss.push_back(latest_test);
        if (validation) {
          const ValidationScore v = validate_model(result.fm, *validation);
          row.error_pct = v.error_pct;
          row.val_mse = v.mse;
        }
      }
      schedule.plateau_update(latest_test);
      result.record.rows.push_back(row);
    }
  } catch (const std::exception& e) {
    result.record.mark_failed(e);
  }
  return result;
}

// ---------------------------------------------------------------------------

UTestResult mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y,
                           UMethod method) {
  require(!x.empty() && !y.empty(), "mann_whitney_u: both samples must be non-empty");
  const std::size_t nx = x.size(), ny = y.size(), n = nx + ny;
  for (double v : x) require(std::isfinite(v), "mann_whitney_u: non-finite value in x");
  for (double v : y) require(std::isfinite(v), "mann_whitney_u: non-finite value in y");

  std::vector<std::pair<double, bool>> pooled;  // value, belongs to x
  pooled.reserve(n);
  for (double v : x) pooled.emplace_back(v, true);
  for (double v : y) pooled.emplace_back(v, false);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // doubled midranks keep tied ranks integral
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[j + 1].first == pooled[i].first) ++j;
    const long r2 = static_cast<long>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) rank2[k] = r2;
    const double t = static_cast<double>(j - i + 1);
    if (t > 1) {
      ties = true;
      tie_term += t * t * t - t;
    }
    i = j + 1;
  }
  long rx2 = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (pooled[k].second) rx2 += rank2[k];
  }
  UTestResult res;
  res.ties = ties;
  res.u = static_cast<double>(rx2) / 2.0 - static_cast<double>(nx * (nx + 1)) / 2.0;
  if (pooled.front().first == pooled.back().first) {
    res.p = 0.5;
    res.exact = method == UMethod::exact;
    return res;
  }

  const bool exact = method == UMethod::exact ||
                     (method == UMethod::automatic && std::min(nx, ny) <= 8);
  res.exact = exact;
  if (exact) {
    // ways[k][s]: subsets of k pooled items with doubled-rank sum s
    const long max_sum = std::accumulate(rank2.begin(), rank2.end(), 0L);
    std::vector<std::vector<long double>> ways(nx + 1,
                                               std::vector<long double>(static_cast<std::size_t>(max_sum) + 1, 0.0L));
    ways[0][0] = 1.0L;
    for (std::size_t item = 0; item < n; ++item) {
      const long r = rank2[item];
      for (std::size_t k = std::min(item + 1, nx); k >= 1; --k) {
        auto& dst = ways[k];
        const auto& src = ways[k - 1];
        for (long s = max_sum; s >= r; --s) {
          dst[static_cast<std::size_t>(s)] += src[static_cast<std::size_t>(s - r)];
        }
      }
    }
    long double below = 0.0L, total = 0.0L;
    for (long s = 0; s <= max_sum; ++s) {
      total += ways[nx][static_cast<std::size_t>(s)];
      if (s <= rx2) below += ways[nx][static_cast<std::size_t>(s)];
    }
    res.p = static_cast<double>(below / total);
    return res;
  }

  const double dn = static_cast<double>(n);
  const double mu = static_cast<double>(nx) * static_cast<double>(ny) / 2.0;
  const double var = static_cast<double>(nx) * static_cast<double>(ny) / 12.0 *
                     ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (!(var > 0.0)) {
    res.p = 0.5;
    return res;
  }
  const double z = (res.u + 0.5 - mu) / std::sqrt(var);
  res.p = 0.5 * std::erfc(-z / std::sqrt(2.0));
  return res;
}

Comparison compare_variants(const std::map<std::string, VariantTerminals>& records, double alpha) {
  Comparison cmp;
  std::vector<std::string> order{"Oracle", "C/B", "C/PE", "PG/IRS", "PG/GR", "P/RW"};
  for (const auto& [name, _] : records) {
    if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
  }
  for (const auto& name : order) {
    auto it = records.find(name);
    if (it == records.end()) continue;
    const VariantTerminals& t = it->second;
    SummaryRow row;
    row.variant = name;
    row.runs = std::max({t.dap_mse.size(), t.postdap_mse.size()});
    if (row.runs < 2) cmp.warnings.push_back(name + ": fewer than two completed runs");
    row.dap_mse_mean = mean_of(t.dap_mse);
    row.dap_mse_sd = sd_of(t.dap_mse);
    row.dap_err_mean = mean_of(t.dap_error_pct);
    row.dap_err_sd = sd_of(t.dap_error_pct);
    row.postdap_mse_mean = mean_of(t.postdap_mse);
    row.postdap_mse_sd = sd_of(t.postdap_mse);
    row.postdap_err_mean = mean_of(t.postdap_error_pct);
    row.postdap_err_sd = sd_of(t.postdap_error_pct);
    cmp.summary.push_back(row);
  }

  const auto cb = records.find("C/B");
  for (const std::string other : {"C/PE", "PG/IRS"}) {
    if (records.size() < 2) break;
    const auto it = records.find(other);
    if (cb == records.end() || it == records.end()) {
      cmp.warnings.push_back("hypothesis C/B < " + other + " omitted: missing variant");
      continue;
    }
    const std::pair<const char*, std::pair<const std::vector<double>*, const std::vector<double>*>>
        phases[] = {{"DAP", {&cb->second.dap_mse, &it->second.dap_mse}},
                    {"Post-DAP", {&cb->second.postdap_mse, &it->second.postdap_mse}}};
    for (const auto& [phase, samples] : phases) {
      if (samples.first->empty() || samples.second->empty()) {
        cmp.warnings.push_back(std::string("hypothesis C/B < ") + other + " (" + phase +
                               ") omitted: no terminal values");
        continue;
      }
      TestRow t;
      t.hypothesis = "C/B < " + other;
      t.phase = phase;
      t.n_x = samples.first->size();
      t.n_y = samples.second->size();
      t.result = mann_whitney_u(*samples.first, *samples.second);
      t.alpha = alpha;
      t.reject = t.result.p < alpha;
      cmp.tests.push_back(t);
    }
  }
  return cmp;
}

void write_summary_csv(const std::filesystem::path& path, const Comparison& cmp) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variant,runs,dap_mse,dap_mse_sd,dap_mean_percent_error,dap_mean_percent_error_sd,"
         "postdap_mse,postdap_mse_sd,postdap_mean_percent_error,postdap_mean_percent_error_sd\n";
  for (const SummaryRow& r : cmp.summary) {
    out << r.variant << ',' << r.runs << ',' << field(r.dap_mse_mean) << ',' << field(r.dap_mse_sd)
        << ',' << field(r.dap_err_mean) << ',' << field(r.dap_err_sd) << ','
        << field(r.postdap_mse_mean) << ',' << field(r.postdap_mse_sd) << ','
        << field(r.postdap_err_mean) << ',' << field(r.postdap_err_sd) << '\n';
  }
}

void write_tests_csv(const std::filesystem::path& path, const Comparison& cmp) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "hypothesis,phase,metric,n_x,n_y,U,p,alpha,method,ties,reject\n";
  for (const TestRow& t : cmp.tests) {
    out << t.hypothesis << ',' << t.phase << ",mse," << t.n_x << ',' << t.n_y << ','
        << field(t.result.u) << ',' << field(t.result.p) << ',' << field(t.alpha) << ','
        << (t.result.exact ? "exact" : "normal") << ',' << (t.result.ties ? 1 : 0) << ','
        << (t.reject ? 1 : 0) << '\n';
  }
}

}  // namespace hhvg

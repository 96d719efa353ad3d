#include "hhvg/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "hhvg/errors.hpp"

#ifndef HHVG_VERSION
#define HHVG_VERSION "unknown"
#endif

namespace hhvg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json plan_json(const PhasePlan& p) {
  return {{"dap_steps", p.dap_steps},           {"postdap_epochs", p.postdap_epochs},
          {"batch_size", p.batch_size},         {"validate_every", p.validate_every},
          {"plateau_window", p.plateau_window}, {"plateau_factor", p.plateau_factor}};
}

// Published full-scale terminal values (MSE ... mean percent error); recorded, never asserted.
json full_scale_reference() {
  return {{"Oracle", "0.0008 ... 0.8430"}, {"C/B", "0.0017 ... 1.2420"}, {"P/RW", "0.6615 ... 22.1453"}};
}

void write_manifest(const fs::path& dir, const json& m) {
  write_file_atomic(dir / kManifest, m.dump(2) + "\n");
}

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) throw DependencyError("no manifest in " + dir.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DependencyError("unreadable manifest in " + dir.string() + ": " + e.what());
  }
}

std::string format_failure(const RunRecord& r, const char* phase) {
  return std::string(phase) + ": " + r.failure;
}

}  // namespace

fs::path default_run_root() {
  const char* env = std::getenv(kRunRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

const std::vector<std::string>& run_variant_keys() {
  static const std::vector<std::string> keys{"oracle", "cb", "cpe", "pgirs", "pggr", "prw"};
  return keys;
}

std::string run_variant_label(const std::string& key) {
  if (key == "oracle") return "Oracle";
  const auto& keys = run_variant_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
    throw ConfigError("unknown variant '" + key + "' (expected oracle, cb, cpe, pgirs, pggr or prw)");
  }
  return std::string(VariantSpec::parse(key).label());
}

SharedData prepare_shared(const ExperimentConfig& cfg) {
  SharedData d;
  d.split = OracleSplit::make(cfg.oracle_grid.row_count(), cfg.split_seed);
  d.validation = ValidationSet::from_rows(oracle_rows(cfg.env, cfg.oracle_grid, d.split.validation));
  return d;
}

fs::path run_directory(const fs::path& root, const std::string& key, std::uint64_t seed,
                       const ExperimentConfig& cfg) {
  return root / (key + "-s" + std::to_string(seed) + "-" + cfg.hash_hex().substr(0, 8));
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

RunOutcome read_run(const fs::path& dir) {
  const json m = read_manifest(dir);
  RunOutcome o;
  o.dir = dir;
  o.variant = m.value("variant", "");
  o.seed = m.value("seed", std::uint64_t{0});
  o.completed = m.value("status", "") == "completed";
  o.failure = m.value("failure", "");
  o.failure_kind = m.value("failure_kind", "");
  if (!o.completed) return o;
  if (o.variant == "oracle") {
    o.postdap_terminal = read_run_csv(dir / "train.csv").last_validated();
  } else {
    o.dap_terminal = read_run_csv(dir / "dap.csv").last_validated();
    o.postdap_terminal = read_run_csv(dir / "postdap.csv").last_validated();
  }
  return o;
}

RunOutcome execute_run(const ExperimentConfig& cfg, const std::string& key, std::uint64_t seed,
                       const fs::path& root, const RunOptions& options) {
  cfg.validate();
  const std::string label = run_variant_label(key);
  const fs::path dir = run_directory(root, key, seed, cfg);
  if (!options.force && fs::exists(dir / kManifest)) {
    RunOutcome prior = read_run(dir);
    if (prior.completed) {
      prior.reused = true;
      return prior;
    }
  }

  std::optional<RewardDatabase> external;
  fs::path dependency;
  if (key == "pgirs") {
    const fs::path cb_dir = run_directory(root, "cb", seed, cfg);
    dependency = cb_dir / "rewards.bin";
    bool ok = false;
    if (fs::exists(cb_dir / kManifest)) ok = read_manifest(cb_dir).value("status", "") == "completed";
    if (!ok || !fs::exists(dependency)) {
      throw DependencyError("pgirs needs the reward database of a completed cb run with the same seed "
                            "and config: " + dependency.string());
    }
    external = RewardDatabase::load(dependency);
  }

  std::optional<SharedData> own;
  const SharedData* shared = options.shared;
  if (!shared) {
    own = prepare_shared(cfg);
    shared = &*own;
  }

  fs::create_directories(dir);
  write_file_atomic(dir / "config.yaml", cfg.to_yaml());
  json m = {{"variant", key},
            {"label", label},
            {"seed", seed},
            {"config_hash", cfg.hash_hex()},
            {"profile", cfg.profile},
            {"phase_plan", plan_json(cfg.plan)},
            {"code_version", HHVG_VERSION},
            {"started", utc_now()},
            {"finished", nullptr},
            {"status", "running"},
            {"files", json::array({"config.yaml"})},
            {"full_scale_reference", full_scale_reference()}};
  if (!dependency.empty()) m["depends_on"] = fs::relative(dependency, root).string();
  write_manifest(dir, m);

  RunOutcome out;
  out.dir = dir;
  out.variant = key;
  out.seed = seed;
  std::vector<std::string> files{"config.yaml"};

  if (key == "oracle") {
    const OracleGridSpec grid = cfg.oracle_grid;
    const EnvConfig env = cfg.env;
    m["oracle_rows"] = grid.row_count();
    m["oracle_training"] = {{"epochs", cfg.oracle.epochs}, {"batch_size", cfg.oracle.batch_size},
                            {"rate", cfg.oracle.rate}, {"test_eval_rows", cfg.oracle.test_eval_rows}};
    OracleResult res = train_oracle([&](std::uint64_t i) { return oracle_row_at(env, grid, i); },
                                    shared->split, cfg.oracle, cfg.agent.model, cfg.agent.optimizer,
                                    seed, &shared->validation);
    write_run_csv(dir / "train.csv", res.record);
    save_checkpoint(dir / "model.ckpt", {{"fm.", &res.fm.params}});
    files.insert(files.end(), {"train.csv", "model.ckpt"});
    out.completed = !res.record.failed;
    out.failure = res.record.failed ? format_failure(res.record, "oracle") : "";
    out.failure_kind = res.record.failure_kind;
    out.postdap_terminal = res.record.last_validated();
  } else {
    const VariantSpec variant = VariantSpec::parse(key);
    m["step_conventions"] = {{"dap", "steps 1.." + std::to_string(cfg.plan.dap_steps)},
                             {"postdap", "cumulative clock, steps " + std::to_string(cfg.plan.dap_steps + 1) +
                                             ".." + std::to_string(cfg.plan.dap_steps + cfg.plan.postdap_epochs)},
                             {"postdap_epochs", cfg.plan.postdap_epochs}};
    DapResult dap = run_dap(variant, cfg.env, cfg.agent, cfg.plan, seed, &shared->validation,
                            external ? &*external : nullptr);
    write_run_csv(dir / "dap.csv", dap.record);
    files.push_back("dap.csv");
    out.dap_terminal = dap.record.last_validated();
    RunRecord post;
    if (dap.record.failed) {
      out.failure = format_failure(dap.record, "dap");
      out.failure_kind = dap.record.failure_kind;
    } else {
      post = run_postdap(*dap.agent, cfg.plan, dap.coverage, &shared->validation);
      if (post.failed) {
        out.failure = format_failure(post, "postdap");
        out.failure_kind = post.failure_kind;
      }
    }
    write_run_csv(dir / "postdap.csv", post);
    files.push_back("postdap.csv");
    out.postdap_terminal = post.last_validated();
    out.completed = !dap.record.failed && !post.failed;

    const Learner& l = dap.agent->learner();
    std::vector<std::pair<std::string, const ParamSet*>> sets{{"fm.", &l.fm.params}};
    if (variant.meta_model) sets.push_back({"mm.", &l.mm.params});
    if (variant.value_function) {
      sets.push_back({"vf.", &l.vf.params});
      sets.push_back({"vf_clone.", &l.vf_clone.params});
    }
    if (variant.action_policy) sets.push_back({"ap.", &l.ap.params});
    save_checkpoint(dir / "model.ckpt", sets);
    files.push_back("model.ckpt");
    if (variant.meta_model) {
      dap.agent->reward_log().save(dir / "rewards.bin");
      files.push_back("rewards.bin");
    }
    m["pool_size"] = dap.agent->pool().size();
  }

  m["files"] = files;
  m["finished"] = utc_now();
  m["status"] = out.completed ? "completed" : "failed";
  if (!out.completed) {
    m["failure"] = out.failure;
    m["failure_kind"] = out.failure_kind;
  }
  write_manifest(dir, m);
  return out;
}

Comparison compare_runs(const std::vector<fs::path>& dirs) {
  if (dirs.empty()) throw ContractViolation("compare_runs: no run directories given");
  std::map<std::string, VariantTerminals> records;
  std::vector<std::string> warnings;
  std::vector<fs::path> sorted = dirs;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (const auto& dir : sorted) {
    RunOutcome o;
    try {
      o = read_run(dir);
    } catch (const std::exception& e) {
      warnings.push_back("skipped " + dir.string() + ": " + e.what());
      continue;
    }
    if (!o.completed) {
      warnings.push_back("skipped incomplete run " + dir.string());
      continue;
    }
    VariantTerminals& t = records[run_variant_label(o.variant)];
    if (o.dap_terminal) {
      t.dap_mse.push_back(o.dap_terminal->val_mse);
      t.dap_error_pct.push_back(o.dap_terminal->error_pct);
    }
    if (o.postdap_terminal) {
      t.postdap_mse.push_back(o.postdap_terminal->val_mse);
      t.postdap_error_pct.push_back(o.postdap_terminal->error_pct);
    }
  }
  Comparison cmp = compare_variants(records);
  cmp.warnings.insert(cmp.warnings.begin(), warnings.begin(), warnings.end());
  return cmp;
}

void write_comparison(const fs::path& out_dir, const Comparison& cmp) {
  fs::create_directories(out_dir);
  write_summary_csv(out_dir / "summary.csv", cmp);
  write_tests_csv(out_dir / "tests.csv", cmp);
}

void generate_oracle_dataset(const ExperimentConfig& cfg, const fs::path& path) {
  const std::uint64_t n = cfg.oracle_grid.row_count();
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    oracle_grid_enumerate(cfg.env, cfg.oracle_grid, [&](const TransitionRow& r) {
      out.write(reinterpret_cast<const char*>(r.data()), sizeof(double) * r.size());
    });
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace hhvg

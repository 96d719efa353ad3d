// Command-line front end: run, compare, selftest, oracle-gen.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hhvg/checks.hpp"
#include "hhvg/config.hpp"
#include "hhvg/errors.hpp"
#include "hhvg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace hhvg;

namespace {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kConfig = 3,
  kDependency = 4,
  kNumerical = 5,
};

struct Task {
  std::string key;
  std::uint64_t seed;
};

int exit_code_for(const RunOutcome& o) {
  if (o.completed) return kOk;
  return o.failure_kind == "numerical" ? kNumerical : kFailure;
}

int run_one(const ExperimentConfig& cfg, const Task& task, const fs::path& root, bool force,
            const SharedData& shared) {
  try {
    const RunOutcome o = execute_run(cfg, task.key, task.seed, root, {force, &shared});
    std::printf("%-7s seed %-4llu %-9s %s%s\n", task.key.c_str(),
                static_cast<unsigned long long>(task.seed), o.completed ? "completed" : "FAILED",
                o.dir.string().c_str(), o.reused ? " (reused)" : "");
    if (!o.completed) std::fprintf(stderr, "error: %s\n", o.failure.c_str());
    std::fflush(stdout);
    return exit_code_for(o);
  } catch (const DependencyError& e) {
    std::fprintf(stderr, "dependency error: %s\n", e.what());
    return kDependency;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const NumericalDomainError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
}

// Worst exit code wins: dependency and numerical failures outrank generic ones.
int combine(int a, int b) { return std::max(a, b); }

int run_tasks(const ExperimentConfig& cfg, const std::vector<Task>& tasks, const fs::path& root,
              bool force, int jobs) {
  const SharedData shared = prepare_shared(cfg);
  int worst = kOk;
  if (jobs <= 1) {
    for (const auto& t : tasks) worst = combine(worst, run_one(cfg, t, root, force, shared));
    return worst;
  }
  std::map<pid_t, Task> running;
  auto reap = [&] {
    int status = 0;
    const pid_t pid = ::wait(&status);
    if (pid <= 0) return;
    running.erase(pid);
    worst = combine(worst, WIFEXITED(status) ? WEXITSTATUS(status) : kFailure);
  };
  for (const auto& t : tasks) {
    while (static_cast<int>(running.size()) >= jobs) reap();
    std::fflush(stdout);
    const pid_t pid = ::fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
      const int code = run_one(cfg, t, root, force, shared);
      std::fflush(stdout);
      std::fflush(stderr);
      ::_exit(code);
    }
    running.emplace(pid, t);
  }
  while (!running.empty()) reap();
  return worst;
}

std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(spec);
  for (std::string part; std::getline(ss, part, ',');) {
    const auto dash = part.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoull(part));
      } else {
        const auto lo = std::stoull(part.substr(0, dash)), hi = std::stoull(part.substr(dash + 1));
        if (hi < lo) throw ConfigError("seed range " + part + " is empty");
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
      }
    } catch (const std::logic_error&) {
      throw ConfigError("cannot parse seeds '" + spec + "'");
    }
  }
  return out;
}

std::vector<std::string> parse_variants(const std::string& spec) {
  std::vector<std::string> out;
  if (spec == "all") return run_variant_keys();
  std::stringstream ss(spec);
  for (std::string part; std::getline(ss, part, ',');) {
    run_variant_label(part);
    out.push_back(part);
  }
  return out;
}

std::vector<fs::path> expand_run_dirs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> dirs;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::exists(p / "manifest.json")) {
      dirs.push_back(p);
    } else if (fs::is_directory(p)) {
      // a run root: every child holding a manifest
      for (const auto& entry : fs::directory_iterator(p)) {
        if (fs::exists(entry.path() / "manifest.json")) dirs.push_back(entry.path());
      }
    } else {
      std::fprintf(stderr, "warning: skipped %s: not a run directory\n", in.c_str());
    }
  }
  return dirs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curiosity-driven model learning: experiments, comparison and self-checks"};
  app.require_subcommand(1);

  std::string config_path, profile;
  std::vector<std::string> overrides;
  auto add_config_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "YAML configuration file");
    cmd->add_option("--profile", profile, "desk or full (overrides the file)")
        ->check(CLI::IsMember({"desk", "full"}));
    cmd->add_option("--set", overrides, "Dotted override, e.g. --set agent.lr_fm=1e-3");
  };

  auto* run = app.add_subcommand("run", "Run one or more variants for one or more seeds");
  std::string variant_spec, seed_spec = "1", root_opt;
  int jobs = 1;
  bool force = false, print_config = false;
  run->add_option("--variant", variant_spec, "oracle, cb, cpe, pgirs, pggr, prw, a comma list or all")
      ->required();
  run->add_option("--seed,--seeds", seed_spec, "Seed, list or range such as 1-16");
  run->add_option("--root", root_opt, std::string("Run root (default $") + kRunRootEnv + " or ./runs)");
  run->add_option("--jobs,-j", jobs, "Parallel runs, one process each")->check(CLI::PositiveNumber);
  run->add_flag("--force", force, "Rerun even when a completed run exists");
  run->add_flag("--print-config", print_config, "Print the effective configuration and exit");
  add_config_flags(run);

  auto* compare = app.add_subcommand("compare", "Summary and rank-sum tables over completed runs");
  std::vector<std::string> compare_inputs;
  std::string compare_out = "comparison";
  compare->add_option("runs", compare_inputs, "Run directories or run roots");
  compare->add_option("--out", compare_out, "Output directory for summary.csv and tests.csv");

  auto* selftest = app.add_subcommand("selftest", "Run the invariant suite");
  bool mutate_kl = false;
  selftest->add_flag("--mutate-kl-sign", mutate_kl, "Inject a KL sign error to exercise the gate");

  auto* oracle_gen = app.add_subcommand("oracle-gen", "Write the oracle grid dataset");
  std::string oracle_out;
  oracle_gen->add_option("--out", oracle_out, "Output file (u64 count, then 10 float64 per row)")
      ->required();
  add_config_flags(oracle_gen);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*run) {
      const ExperimentConfig cfg = ExperimentConfig::load(config_path, profile, overrides);
      if (print_config) {
        std::cout << cfg.to_yaml();
        return kOk;
      }
      const fs::path root = root_opt.empty() ? default_run_root() : fs::path(root_opt);
      const auto variants = parse_variants(variant_spec);
      const auto seeds = parse_seeds(seed_spec);
      std::vector<Task> first, second;
      for (const auto& v : variants) {
        for (auto s : seeds) (v == "pgirs" ? second : first).push_back({v, s});
      }
      std::printf("config %s (%s profile), root %s\n", cfg.hash_hex().c_str(), cfg.profile.c_str(),
                  root.string().c_str());
      int code = run_tasks(cfg, first, root, force, jobs);
      if (!second.empty()) code = combine(code, run_tasks(cfg, second, root, force, jobs));
      return code;
    }
    if (*compare) {
      if (compare_inputs.empty()) {
        std::fprintf(stderr, "usage error: compare needs at least one run directory\n%s",
                     compare->help().c_str());
        return kUsage;
      }
      const auto dirs = expand_run_dirs(compare_inputs);
      if (dirs.empty()) {
        std::fprintf(stderr, "usage error: no run directories found\n");
        return kUsage;
      }
      const Comparison cmp = compare_runs(dirs);
      for (const auto& w : cmp.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      write_comparison(compare_out, cmp);
      std::printf("%-8s %5s %12s %12s %12s %12s\n", "variant", "runs", "dap_mse", "dap_err%", "post_mse",
                  "post_err%");
      for (const auto& r : cmp.summary) {
        std::printf("%-8s %5zu %12.6g %12.6g %12.6g %12.6g\n", r.variant.c_str(), r.runs, r.dap_mse_mean,
                    r.dap_err_mean, r.postdap_mse_mean, r.postdap_err_mean);
      }
      for (const auto& t : cmp.tests) {
        std::printf("%-16s %-9s U=%-8g p=%-10.4g %s\n", t.hypothesis.c_str(), t.phase.c_str(), t.result.u,
                    t.result.p, t.reject ? "reject H0" : "keep H0");
      }
      std::printf("wrote %s/summary.csv and %s/tests.csv\n", compare_out.c_str(), compare_out.c_str());
      return kOk;
    }
    if (*selftest) {
      const auto results = run_selftest({mutate_kl});
      bool ok = true;
      std::printf("%-38s %-6s %9s  %s\n", "suite", "result", "seconds", "detail");
      for (const auto& r : results) {
        ok = ok && r.passed;
        std::printf("%-38s %-6s %9.2f  %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.seconds,
                    r.detail.c_str());
      }
      return ok ? kOk : kFailure;
    }
    if (*oracle_gen) {
      const ExperimentConfig cfg = ExperimentConfig::load(config_path, profile, overrides);
      generate_oracle_dataset(cfg, oracle_out);
      std::printf("wrote %llu rows to %s\n", static_cast<unsigned long long>(cfg.oracle_grid.row_count()),
                  oracle_out.c_str());
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const DependencyError& e) {
    std::fprintf(stderr, "dependency error: %s\n", e.what());
    return kDependency;
  } catch (const NumericalDomainError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kOk;
}

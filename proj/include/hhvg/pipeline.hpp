#pragma once

// Run directories, manifests and the per-variant pipelines behind the CLI.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hhvg/config.hpp"
#include "hhvg/harness.hpp"

namespace hhvg {

/// Environment variable naming the run root; defaults to ./runs.
inline constexpr const char* kRunRootEnv = "HHVG_RUN_ROOT";
std::filesystem::path default_run_root();

/// oracle, cb, cpe, pgirs, pggr, prw.
const std::vector<std::string>& run_variant_keys();
/// "Oracle" or the variant label; unknown keys are a ConfigError.
std::string run_variant_label(const std::string& key);

/// Split and validation rows shared by every run of one configuration.
struct SharedData {
  OracleSplit split;
  ValidationSet validation;
};
SharedData prepare_shared(const ExperimentConfig& cfg);

/// `<root>/<key>-s<seed>-<first 8 hex digits of the config hash>`.
std::filesystem::path run_directory(const std::filesystem::path& root, const std::string& key,
                                    std::uint64_t seed, const ExperimentConfig& cfg);

struct RunOutcome {
  std::filesystem::path dir;
  std::string variant;  // key
  std::uint64_t seed = 0;
  bool completed = false;
  bool reused = false;
  std::string failure;
  std::string failure_kind;
  /// Last validated rows; the oracle only has a post-DAP analogue.
  std::optional<RunRow> dap_terminal;
  std::optional<RunRow> postdap_terminal;
};

struct RunOptions {
  /// Rerun even when a completed manifest exists.
  bool force = false;
  const SharedData* shared = nullptr;
};

/// Oracle: train on the oracle grid. Agents: DAP then post-DAP. PG/IRS needs
/// the reward database of the completed C/B run with the same seed and
/// config, otherwise DependencyError before anything is written.
RunOutcome execute_run(const ExperimentConfig& cfg, const std::string& key, std::uint64_t seed,
                       const std::filesystem::path& root, const RunOptions& options = {});

/// Reads a run back from its manifest and traces.
RunOutcome read_run(const std::filesystem::path& dir);

/// Completed runs feed compare_variants; incomplete ones are skipped with a warning.
Comparison compare_runs(const std::vector<std::filesystem::path>& dirs);
void write_comparison(const std::filesystem::path& out_dir, const Comparison& cmp);

/// Writes `path` through a temporary sibling and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

/// Rows of the full oracle grid as one binary file.
void generate_oracle_dataset(const ExperimentConfig& cfg, const std::filesystem::path& path);

}  // namespace hhvg

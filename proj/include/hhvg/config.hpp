#pragma once

// Experiment configuration: profiles, YAML files and dotted overrides.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hhvg/agent.hpp"
#include "hhvg/env.hpp"
#include "hhvg/harness.hpp"

namespace hhvg {

struct ExperimentConfig {
  std::string profile = "desk";
  int runs_per_variant = 16;
  /// Seeds the oracle split so every run shares one validation set.
  std::uint64_t split_seed = 2017;
  EnvConfig env = EnvConfig::defaults();
  OracleGridSpec oracle_grid = OracleGridSpec::desk();
  AgentConfig agent;
  PhasePlan plan = PhasePlan::desk();
  OracleTraining oracle;

  /// "desk" or "full"; anything else is a ConfigError.
  static ExperimentConfig for_profile(const std::string& name);

  /// Profile defaults, then the file (if any), then `key=value` overrides.
  /// An explicit `profile` argument beats the file's profile key.
  static ExperimentConfig load(const std::filesystem::path& file, const std::string& profile = "",
                               const std::vector<std::string>& overrides = {});

  static ExperimentConfig from_yaml(const std::string& text, const std::string& profile = "",
                                    const std::vector<std::string>& overrides = {});

  /// Canonical YAML; equal configs emit equal text.
  std::string to_yaml() const;
  /// FNV-1a 64 of to_yaml().
  std::uint64_t hash() const;
  std::string hash_hex() const;

  void validate() const;
};

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace hhvg

#pragma once

// Run configuration and the artifacts a run leaves on disk.

#include <cstdint>
#include <string>
#include <vector>

#include "abh/compare.hpp"
#include "abh/economy.hpp"
#include "abh/fd_oracle.hpp"
#include "abh/trainer.hpp"

namespace abh {

inline constexpr std::uint32_t kCsvFormatVersion = 1;

struct RunConfig {
  ModelParams model;
  TrainConfig train;
  fd::FdGrid fd_grid;
  fd::FdOptions fd_options;
  std::size_t slice_n_a = 101;
  std::size_t slice_n_z = 101;
  std::vector<double> slice_times{1.0, 2.0, 5.0, 9.0};

  /// One human-readable line per value that differs from the defaults, in
  /// the order it was applied.
  std::vector<std::string> overrides;

  /// Every violated constraint across all sections.
  std::vector<std::string> violations() const;
};

/// Applies a JSON object with flat keys on top of `base`. Unknown keys, type
/// mismatches and constraint violations are collected and thrown together as
/// one ConfigError.
RunConfig parse_config_text(const std::string& json_text, RunConfig base = {});
RunConfig parse_config_file(const std::string& path, RunConfig base = {});

/// Sets one key from a command-line flag and logs it as an override.
void set_flag(RunConfig& config, const std::string& flag, const std::string& key, std::uint64_t value);

/// Canonical JSON of every effective setting; stable key order.
std::string config_json(const RunConfig& config);
/// FNV-1a 64 of config_json, as 16 hex digits.
std::string config_hash(const RunConfig& config);

/// Shortest round-trip decimal, independent of the locale.
std::string format_number(double x);

std::string losses_csv(const std::vector<LossBreakdown>& history);
std::string timepaths_csv(const EquilibriumPath& path);
/// Columns a, z, v, c, g on an n_a x n_z tensor mesh at time t.
std::string slice_csv(const SolutionSource& source, const ModelParams& model, double t, std::size_t n_a,
                      std::size_t n_z);

std::string slice_file_name(double t);

/// Relative change of the capital path, max over nodes: |K - K_ref| / |K_ref|.
double path_relative_change(const std::vector<double>& K, const std::vector<double>& K_ref);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace abh

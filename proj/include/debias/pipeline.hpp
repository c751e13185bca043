#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "debias/common.hpp"
#include "debias/forest.hpp"
#include "debias/household.hpp"
#include "debias/importance.hpp"
#include "debias/matching.hpp"
#include "debias/synth.hpp"
#include "debias/tiers.hpp"
#include "json.hpp"

namespace debias {

inline constexpr std::string_view kVersion = "1.0.0";

/// Invalid or unreadable pipeline configuration (exit code 2).
struct ConfigError : Error {
  using Error::Error;
};

/// A stage failed after configuration was accepted (exit code 3).
struct StageError : Error {
  StageError(std::string stage_name, const std::string& what)
      : Error(stage_name + ": " + what), stage(std::move(stage_name)) {}
  std::string stage;
};

struct ScatterRequest {
  std::string isp;
  YearMonth month;
};

struct PipelineConfig {
  // Exactly one input source.
  std::optional<std::filesystem::path> records;  // normalized record file
  std::optional<std::filesystem::path> raw;      // raw export, needs prefix_map and tz
  std::optional<std::filesystem::path> prefix_map;
  std::optional<std::filesystem::path> tz;
  std::optional<std::filesystem::path> os_rules;
  std::optional<SynthSpec> synth;  // generate in memory

  MonthlyStat monthly_stat = MonthlyStat::Mean;
  TierConfig tiers;

  bool importance = true;
  std::string importance_country;  // empty: all countries
  ForestParams forest;
  std::size_t importance_repeats = 3;

  MatchConfig match_defaults;
  std::vector<MatchConfig> pairs;

  std::vector<std::string> density_attributes = {"rwnd_bytes", "min_rtt_ms", "mss_bytes"};
  std::vector<ScatterRequest> scatter;
  double rho_bin_width = 0.1;

  nlohmann::ordered_json source;  // config as given, echoed into the manifest
};

/// Relative paths resolve against `base_dir`. Throws ConfigError.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Test counts surviving each filter; monotone non-increasing in declaration order.
struct StageCounts {
  std::size_t raw = 0;               // input rows (records when no raw export is used)
  std::size_t ingested = 0;          // rows accepted by ingest
  std::size_t thresholded = 0;       // tests of IPs meeting the country test-count threshold
  std::size_t single_household = 0;  // tests of eligible households (gated by rho in refined mode)
  std::size_t matched = 0;           // distinct tests behind any matched sample

  double retained_fraction() const { return raw ? static_cast<double>(thresholded) / static_cast<double>(raw) : 0.0; }
};

/// One row of the per-ISP, per-year filter table.
struct AccountingRow {
  std::string isp;
  int year = 0;
  std::size_t raw = 0;
  std::size_t thresholded = 0;  // tests of IPs whose count within that year meets the threshold
  std::size_t used = 0;         // tests of eligible households within that year
  double retained_pct() const { return raw ? 100.0 * static_cast<double>(thresholded) / static_cast<double>(raw) : 0.0; }
};

std::vector<AccountingRow> test_accounting(std::span<const TestRecord> records,
                                           std::span<const HouseholdProfile> profiles, const TierConfig& cfg);

struct PipelineResult {
  StageCounts counts;
  std::vector<AccountingRow> accounting;
  std::vector<HouseholdProfile> profiles;
  std::optional<ImportanceReport> importance;
  std::vector<RankedRow> ranked;
  nlohmann::ordered_json manifest;
};

/// Runs ingest, household, tiers, importance, matching and report in order, writing
/// records.csv, profiles.csv, importance.csv, outcomes/, ranked.csv, series/ and manifest.json.
/// Throws StageError naming the failing stage.
PipelineResult run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace debias

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "debias/ingest.hpp"
#include "debias/tiers.hpp"
#include "json.hpp"

namespace debias {

enum class Covariate { TierMbps, RwndBytes, MinRttMs, MssBytes, ClientLimitedFrac };
enum class ExactCovariate { OsClass, PeakFlag };

std::string_view to_string(Covariate c);
std::string_view to_string(ExactCovariate c);
Covariate parse_covariate(std::string_view name);
ExactCovariate parse_exact_covariate(std::string_view name);

/// Parameters of one ISP-pair comparison inside one speed-tier bin.
struct MatchConfig {
  std::string treatment_isp;
  std::string control_isp;
  std::string tier_bin;  // bin label such as "0-8"; empty selects every eligible household
  std::optional<int> year;
  /// Per-covariate admissibility window in units of that covariate's pooled SD.
  double caliper_sd = 0.2;
  bool with_replacement = true;
  std::vector<Covariate> continuous = {Covariate::TierMbps, Covariate::RwndBytes, Covariate::MinRttMs,
                                       Covariate::MssBytes, Covariate::ClientLimitedFrac};
  std::vector<ExactCovariate> exact = {ExactCovariate::OsClass, ExactCovariate::PeakFlag};
  std::uint64_t seed = 7;
  std::size_t bootstrap_resamples = 1000;
  /// Match households (yearly means) instead of individual tests.
  bool household_level = false;

  /// Throws debias::Error on a non-positive caliper or empty/overlapping covariate sets.
  void validate() const;
};

/// One unit to be matched. `id` must be unique within its group; ids break distance ties.
struct Sample {
  std::size_t id = 0;
  double outcome = 0.0;
  std::vector<double> continuous;
  std::vector<int> exact;
};

struct Standardization {
  std::vector<double> sd;     // pooled over treated and controls
  std::vector<bool> active;   // false for zero-SD covariates
  std::vector<std::string> warnings;
  Eigen::MatrixXd z;          // treated rows then control rows, active columns scaled by 1/sd
};

/// Pooled-sample SD per covariate. Constant covariates are dropped with a warning.
Standardization standardize(std::span<const Sample> treated, std::span<const Sample> controls);

struct InverseCovariance {
  Eigen::MatrixXd inverse;
  bool regularized = false;
};

/// Inverse sample covariance of the rows of `data`. Singular or near-singular matrices get a
/// ridge of 1e-8 * trace / p on the diagonal first.
InverseCovariance inverse_covariance(const Eigen::MatrixXd& data);

/// sqrt((x-y)^T S^-1 (x-y)).
double mahalanobis(std::span<const double> x, std::span<const double> y, const Eigen::MatrixXd& inv_cov);

/// Seeded processing order of the treated samples (positions, not ids).
std::vector<std::size_t> treated_order(std::size_t n, std::uint64_t seed);

struct MatchedPair {
  std::size_t treated_id = 0;
  std::size_t control_id = 0;
  double distance = 0.0;
  std::size_t treated_index = 0;  // position in the treated span
  std::size_t control_index = 0;  // position in the control span

  bool operator==(const MatchedPair& o) const {
    return treated_id == o.treated_id && control_id == o.control_id;
  }
};

struct BalanceRow {
  std::string covariate;
  double smd_before = 0.0;
  double smd_after = 0.0;
  double p_after = 1.0;
};

struct MatchOutcome {
  std::vector<MatchedPair> pairs;  // treated processing order
  std::size_t treated_total = 0;
  std::size_t control_total = 0;
  std::size_t matched_treated = 0;
  std::size_t matched_controls = 0;  // distinct
  double discard_rate = 1.0;
  double naive_diff_mbps = 0.0;
  std::optional<double> ate_mbps;
  std::optional<std::pair<double, double>> ci95;
  std::vector<BalanceRow> balance;
  std::vector<std::string> warnings;
  std::vector<std::size_t> dropped_covariates;  // zero-SD continuous columns
  bool regularized = false;
};

/// Greedy nearest-neighbour matching in seeded treated order. A control is admissible when its
/// exact covariates agree and every active continuous covariate lies within caliper_sd * SD; the
/// admissible control with the smallest Mahalanobis distance wins (ties by lower id).
MatchOutcome match_samples(std::span<const Sample> treated, std::span<const Sample> controls,
                           const MatchConfig& cfg);

/// Mean of treated minus control outcomes over pairs plus a seeded percentile bootstrap CI
/// (skipped below two pairs).
void estimate_ate(MatchOutcome& outcome, std::span<const Sample> treated, std::span<const Sample> controls,
                  const MatchConfig& cfg);

/// Standardized mean differences before and after matching, with Welch p-values after. Both SMDs
/// divide by the pre-matching pooled SD.
std::vector<BalanceRow> balance_report(std::span<const Sample> treated, std::span<const Sample> controls,
                                       const MatchOutcome& outcome, std::span<const std::string> names);

/// match_samples + naive difference + estimate_ate + balance_report.
MatchOutcome run_matching(std::span<const Sample> treated, std::span<const Sample> controls,
                          const MatchConfig& cfg, std::span<const std::string> names);

struct SampleSet {
  std::vector<Sample> treated;
  std::vector<Sample> controls;
  /// Continuous names followed by exact names; matches Sample layout.
  std::vector<std::string> names;
};

/// Samples for one config. Test-level ids are record indices; household-level ids are profile indices.
SampleSet build_samples(std::span<const TestRecord> records, std::span<const HouseholdProfile> profiles,
                        const MatchConfig& cfg);

struct RankedRow {
  std::size_t pair_id = 0;  // 1-based after sorting
  MatchConfig config;
  std::optional<double> naive_diff_mbps;
  MatchOutcome with_replacement;
  MatchOutcome without_replacement;
  std::string status;  // "ok", "insufficient common support", "no samples in bin"
};

/// Runs every config with and without replacement and sorts by naive difference ascending.
std::vector<RankedRow> rank_pairs(std::span<const MatchConfig> configs, std::span<const TestRecord> records,
                                  std::span<const HouseholdProfile> profiles);

nlohmann::ordered_json to_json(const MatchConfig& cfg);
MatchConfig match_config_from_json(const nlohmann::json& j, const MatchConfig& defaults = {});
nlohmann::ordered_json to_json(const MatchOutcome& outcome, const MatchConfig& cfg);

void write_rank_table(std::ostream& out, std::span<const RankedRow> rows);

}  // namespace debias

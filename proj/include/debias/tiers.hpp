#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "debias/common.hpp"
#include "debias/ingest.hpp"

namespace debias {

/// Pearson correlation. nullopt when n < 2 or either sample has zero variance.
/// Throws debias::Error when the lengths differ.
std::optional<double> pearson_rho(std::span<const double> xs, std::span<const double> ys);

/// Thompson tau for a sample of n points: t(n-1) / (sqrt(n) sqrt(n-2+t^2)),
/// t the two-sided Student-t critical value at `alpha` with n-2 degrees of freedom.
double thompson_tau(std::size_t n, double alpha = 0.05);

struct TauResult {
  std::vector<double> retained;  // input order
  std::vector<double> rejected;  // rejection order
  std::size_t rounds = 0;
};

/// Iterative modified Thompson tau: each round drops the single point farthest from the mean
/// if its deviation exceeds tau * SD. Samples below three points are returned unchanged.
TauResult reject_outliers_tau(std::span<const double> speeds, double alpha = 0.05);

/// Contiguous (low, high] speed bins starting at zero.
class TierBins {
 public:
  TierBins() : TierBins(defaults()) {}
  explicit TierBins(std::vector<double> edges);

  /// {0, 8, 12, 20, 25, 30, 50, 75, 100, 1000}
  static TierBins defaults();
  /// "default" or a comma-separated edge list.
  static TierBins parse(std::string_view text);

  std::size_t size() const { return edges_.size() - 1; }
  double low(std::size_t bin) const { return edges_.at(bin); }
  double high(std::size_t bin) const { return edges_.at(bin + 1); }
  const std::vector<double>& edges() const { return edges_; }

  std::optional<std::size_t> index_of(double mbps) const;
  /// "30-50"
  std::string label(std::size_t bin) const;
  /// Bin for a label such as "30-50"; throws when no bin has exactly those edges.
  std::size_t parse_label(std::string_view label) const;

 private:
  std::vector<double> edges_;
};

struct TierConfig {
  std::map<std::string, std::int64_t, std::less<>> min_tests_by_country = {{"AU", 20}, {"UK", 20}, {"US", 50}};
  std::int64_t default_min_tests = 20;
  /// Overrides the per-country thresholds when set.
  std::optional<std::int64_t> min_tests;
  TierBins bins;
  double alpha = 0.05;
  /// Refined estimation adds the rho <= 0 gate and tau outlier rejection before taking the max.
  bool refined = true;

  std::int64_t threshold_for(std::string_view country) const;
};

/// Single household iff rho is defined and rho <= 0.
constexpr bool classify_household(std::optional<double> rho) { return rho.has_value() && *rho <= 0.0; }

struct HouseholdProfile {
  std::string client_ip;
  std::string isp;
  std::string country;
  std::int64_t annual_test_count = 0;
  std::int64_t off_peak_test_count = 0;
  std::optional<double> rho;
  bool single_household = false;
  bool eligible = false;
  std::string reason;  // empty when eligible
  std::optional<double> tier_mbps;
  std::optional<std::size_t> tier_bin;
  std::string tier_label;
  double max_observed_mbps = 0.0;
  std::size_t outliers_rejected = 0;
};

namespace reasons {
inline constexpr std::string_view kBelowThreshold = "below test-count threshold";
inline constexpr std::string_view kNoOffPeak = "no off-peak test";
inline constexpr std::string_view kSharedIp = "shared IP (rho > 0)";
inline constexpr std::string_view kRhoUndefined = "rho undefined";
inline constexpr std::string_view kOutsideBins = "tier outside bins";
}  // namespace reasons

/// Profile of one IP. All tests must share the same client_ip.
HouseholdProfile estimate_speed_tier(std::span<const TestRecord> tests, const TierConfig& cfg);

/// One profile per IP, sorted by IP.
std::vector<HouseholdProfile> profile_households(std::span<const TestRecord> records, const TierConfig& cfg);

struct Histogram {
  std::vector<double> edges;  // size bins + 1
  std::vector<std::size_t> counts;
  std::vector<double> density;  // unit area
};

/// Histogram over [-1, 1]; rho = 1 lands in the last bin.
Histogram rho_histogram(std::span<const double> rhos, double bin_width = 0.1);

/// Per-ISP histogram of defined rho values.
std::map<std::string, Histogram> rho_distribution(std::span<const HouseholdProfile> profiles,
                                                  double bin_width = 0.1);

/// Per-month rho for the tests of one IP.
std::vector<std::pair<YearMonth, std::optional<double>>> monthly_rho(std::span<const TestRecord> tests);

inline constexpr std::string_view kProfileHeader = "ip,isp,tests,rho,single_household,eligible,reason,tier_mbps,tier_bin";

void write_profiles(std::ostream& out, std::span<const HouseholdProfile> profiles);
std::vector<HouseholdProfile> read_profiles(std::istream& in);

}  // namespace debias

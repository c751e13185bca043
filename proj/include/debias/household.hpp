#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "debias/common.hpp"
#include "debias/ingest.hpp"

namespace debias {

/// How one household's tests in a month collapse to a single value.
enum class MonthlyStat { Mean, Median };

struct CovariateSummary {
  double mean_min_rtt_ms = 0.0;
  double mean_rwnd_bytes = 0.0;
  double mean_mss_bytes = 0.0;
  OsClass modal_os = OsClass::Other;
};

/// One household's value for one calendar month. Every household gets one vote per month,
/// however many tests it ran.
struct HouseholdMonth {
  std::string client_ip;
  std::string isp;
  std::string country;
  YearMonth year_month;
  std::int64_t test_count = 0;
  /// Mean of download_mbps (or the median under MonthlyStat::Median).
  double mean_speed_mbps = 0.0;
  std::int64_t off_peak_test_count = 0;
  CovariateSummary covariates;
};

/// Sorted by (client_ip, year_month).
std::vector<HouseholdMonth> aggregate_monthly(std::span<const TestRecord> records,
                                              MonthlyStat stat = MonthlyStat::Mean);

/// Most frequent OS; ties resolve Modern < Legacy < Other.
OsClass modal_os(std::span<const OsClass> values);

struct MedianPoint {
  YearMonth year_month;
  double median_mbps = 0.0;
  std::size_t households = 0;
};

/// Month-by-month median across households of one ISP. An empty `country` matches any.
std::vector<MedianPoint> monthly_median_series(std::span<const HouseholdMonth> agg, std::string_view isp,
                                               std::string_view country = {});

struct CcdfPoint {
  std::int64_t threshold = 0;
  double fraction = 0.0;  // share of households with strictly more tests than threshold
};

/// CCDF of per-household test counts within a calendar year (all years pooled per household-year
/// when `year` is empty). Points at 0 and at every distinct count.
std::vector<CcdfPoint> test_count_ccdf(std::span<const HouseholdMonth> agg, std::optional<int> year = std::nullopt);

double ccdf_at(std::span<const std::int64_t> counts, std::int64_t threshold);

}  // namespace debias

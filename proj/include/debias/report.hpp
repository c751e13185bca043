#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "debias/household.hpp"
#include "debias/ingest.hpp"
#include "debias/matching.hpp"
#include "debias/tiers.hpp"
#include "json.hpp"

namespace debias {

enum class SeriesKind { MonthlyMedian, Ccdf, Density, ScatterFacet, RhoHist, PairForest };

std::string_view to_string(SeriesKind kind);
/// Throws debias::Error on an unknown name.
SeriesKind parse_series_kind(std::string_view name);

/// Empty cells (monostate) are written as blank CSV fields and JSON null.
using Cell = std::variant<std::monostate, double, std::int64_t, std::string>;

struct Column {
  std::string name;
  std::vector<Cell> values;
};

struct PlotSeries {
  SeriesKind kind = SeriesKind::MonthlyMedian;
  std::vector<Column> columns;
  std::vector<std::pair<std::string, std::string>> metadata;  // insertion order preserved

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().values.size(); }
  const Column& column(std::string_view name) const;
  std::optional<std::string> meta(std::string_view key) const;
  /// Number of distinct values in the kind's grouping column (isp, day, ...).
  std::size_t groups() const;
  /// Throws if columns differ in length or the kind's required columns or metadata are missing.
  void validate() const;
};

std::span<const std::string_view> required_columns(SeriesKind kind);
std::span<const std::string_view> required_metadata(SeriesKind kind);

enum class EmitFormat { Csv, Json };
EmitFormat parse_emit_format(std::string_view name);

void emit(const PlotSeries& series, EmitFormat format, std::ostream& out);
/// Format follows the extension: ".json" selects JSON, anything else CSV.
void emit_file(const PlotSeries& series, const std::string& path);
nlohmann::ordered_json to_json(const PlotSeries& series);

// Builders, one per figure family.

PlotSeries monthly_median_plot(std::span<const HouseholdMonth> agg, std::span<const std::string> isps,
                               std::string_view country);
PlotSeries ccdf_plot(std::span<const HouseholdMonth> agg, std::optional<int> year);
/// Per-ISP density of one record attribute over shared equal-width bins.
/// Attributes: download_mbps, min_rtt_ms, rwnd_bytes, mss_bytes, client_limited_frac, local_hour.
PlotSeries density_plot(std::span<const TestRecord> records, std::string_view attribute,
                        std::span<const std::string> isps, std::size_t bins = 50);
/// Speed against local hour for one ISP and month, one group per day of month.
PlotSeries scatter_facet_plot(std::span<const TestRecord> records, std::string_view isp, YearMonth month);
PlotSeries rho_hist_plot(std::span<const HouseholdProfile> profiles, std::string_view isp, double bin_width = 0.1);
PlotSeries pair_forest_plot(std::span<const RankedRow> rows);

}  // namespace debias

#include "debias/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>

#include "debias/csv.hpp"

namespace debias {

namespace {

constexpr std::array<std::string_view, 6> kKindNames = {"monthly_median", "ccdf",     "density",
                                                        "scatter_facet",  "rho_hist", "pair_forest"};

constexpr std::array<std::string_view, 3> kMedianCols = {"year_month", "median_mbps", "isp"};
constexpr std::array<std::string_view, 2> kCcdfCols = {"threshold", "fraction"};
constexpr std::array<std::string_view, 4> kDensityCols = {"isp", "bin_low", "bin_high", "density"};
constexpr std::array<std::string_view, 3> kScatterCols = {"day", "local_hour", "download_mbps"};
constexpr std::array<std::string_view, 4> kRhoCols = {"bin_low", "bin_high", "count", "density"};
constexpr std::array<std::string_view, 6> kPairCols = {"pair_id", "naive", "ate_r", "ci_lo", "ci_hi", "ate_nr"};

constexpr std::array<std::string_view, 1> kMetaCountry = {"country"};
constexpr std::array<std::string_view, 1> kMetaWindow = {"window"};
constexpr std::array<std::string_view, 1> kMetaAttribute = {"attribute"};
constexpr std::array<std::string_view, 2> kMetaIspMonth = {"isp", "year_month"};
constexpr std::array<std::string_view, 1> kMetaIsp = {"isp"};
constexpr std::array<std::string_view, 0> kMetaNone = {};

Cell opt(const std::optional<double>& v) { return v ? Cell{*v} : Cell{}; }

std::string cell_text(const Cell& c) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) return "";
        else if constexpr (std::is_same_v<T, double>) return format_double(v);
        else if constexpr (std::is_same_v<T, std::int64_t>) return std::to_string(v);
        else return v;
      },
      c);
}

nlohmann::ordered_json cell_json(const Cell& c) {
  return std::visit(
      [](const auto& v) -> nlohmann::ordered_json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) return nullptr;
        else return v;
      },
      c);
}

double attribute_of(const TestRecord& r, std::string_view attribute) {
  if (attribute == "download_mbps") return r.download_mbps;
  if (attribute == "min_rtt_ms") return r.min_rtt_ms;
  if (attribute == "rwnd_bytes") return static_cast<double>(r.rwnd_bytes);
  if (attribute == "mss_bytes") return static_cast<double>(r.mss_bytes);
  if (attribute == "client_limited_frac") return r.client_limited_frac;
  if (attribute == "local_hour") return r.local_hour;
  throw Error("unknown attribute '" + std::string(attribute) + "'");
}

}  // namespace

std::string_view to_string(SeriesKind kind) { return kKindNames.at(static_cast<std::size_t>(kind)); }

SeriesKind parse_series_kind(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (kKindNames[i] == name) return static_cast<SeriesKind>(i);
  throw Error("unknown series kind '" + std::string(name) + "'");
}

std::span<const std::string_view> required_columns(SeriesKind kind) {
  switch (kind) {
    case SeriesKind::MonthlyMedian: return kMedianCols;
    case SeriesKind::Ccdf: return kCcdfCols;
    case SeriesKind::Density: return kDensityCols;
    case SeriesKind::ScatterFacet: return kScatterCols;
    case SeriesKind::RhoHist: return kRhoCols;
    case SeriesKind::PairForest: return kPairCols;
  }
  throw Error("unknown series kind");
}

std::span<const std::string_view> required_metadata(SeriesKind kind) {
  switch (kind) {
    case SeriesKind::MonthlyMedian: return kMetaCountry;
    case SeriesKind::Ccdf: return kMetaWindow;
    case SeriesKind::Density: return kMetaAttribute;
    case SeriesKind::ScatterFacet: return kMetaIspMonth;
    case SeriesKind::RhoHist: return kMetaIsp;
    case SeriesKind::PairForest: return kMetaNone;
  }
  throw Error("unknown series kind");
}

const Column& PlotSeries::column(std::string_view name) const {
  for (const auto& c : columns)
    if (c.name == name) return c;
  throw Error("series has no column '" + std::string(name) + "'");
}

std::optional<std::string> PlotSeries::meta(std::string_view key) const {
  for (const auto& [k, v] : metadata)
    if (k == key) return v;
  return std::nullopt;
}

std::size_t PlotSeries::groups() const {
  std::string_view key;
  switch (kind) {
    case SeriesKind::MonthlyMedian:
    case SeriesKind::Density: key = "isp"; break;
    case SeriesKind::ScatterFacet: key = "day"; break;
    case SeriesKind::PairForest: key = "pair_id"; break;
    case SeriesKind::Ccdf:
    case SeriesKind::RhoHist: return rows() > 0 ? 1 : 0;
  }
  std::set<std::string> seen;
  for (const auto& v : column(key).values) seen.insert(cell_text(v));
  return seen.size();
}

void PlotSeries::validate() const {
  const auto n = rows();
  std::set<std::string_view> names;
  for (const auto& c : columns) {
    if (c.values.size() != n) throw Error("column '" + c.name + "' length differs");
    if (!names.insert(c.name).second) throw Error("duplicate column '" + c.name + "'");
  }
  for (auto req : required_columns(kind))
    if (!names.contains(req))
      throw Error(std::string(to_string(kind)) + " series lacks column '" + std::string(req) + "'");
  for (auto req : required_metadata(kind))
    if (!meta(req)) throw Error(std::string(to_string(kind)) + " series lacks metadata '" + std::string(req) + "'");
}

EmitFormat parse_emit_format(std::string_view name) {
  const auto lower = to_lower(name);
  if (lower == "csv") return EmitFormat::Csv;
  if (lower == "json") return EmitFormat::Json;
  throw Error("unknown output format '" + std::string(name) + "'");
}

nlohmann::ordered_json to_json(const PlotSeries& series) {
  series.validate();
  nlohmann::ordered_json j;
  j["kind"] = to_string(series.kind);
  auto meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : series.metadata) meta[k] = v;
  j["metadata"] = meta;
  auto cols = nlohmann::ordered_json::array();
  for (const auto& c : series.columns) cols.push_back(c.name);
  j["columns"] = cols;
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < series.rows(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (const auto& c : series.columns) row.push_back(cell_json(c.values[i]));
    rows.push_back(std::move(row));
  }
  j["rows"] = rows;
  return j;
}

void emit(const PlotSeries& series, EmitFormat format, std::ostream& out) {
  series.validate();
  if (format == EmitFormat::Json) {
    out << to_json(series).dump(2) << '\n';
    return;
  }
  std::vector<std::string> row;
  for (const auto& c : series.columns) row.push_back(c.name);
  csv::write_row(out, row);
  for (std::size_t i = 0; i < series.rows(); ++i) {
    row.clear();
    for (const auto& c : series.columns) row.push_back(cell_text(c.values[i]));
    csv::write_row(out, row);
  }
}

void emit_file(const PlotSeries& series, const std::string& path) {
  const bool json = path.size() >= 5 && to_lower(path.substr(path.size() - 5)) == ".json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  emit(series, json ? EmitFormat::Json : EmitFormat::Csv, out);
}

PlotSeries monthly_median_plot(std::span<const HouseholdMonth> agg, std::span<const std::string> isps,
                               std::string_view country) {
  PlotSeries s;
  s.kind = SeriesKind::MonthlyMedian;
  s.metadata = {{"country", std::string(country)}};
  Column ym{"year_month", {}}, med{"median_mbps", {}}, isp_col{"isp", {}}, hh{"households", {}};
  for (const auto& isp : isps) {
    for (const auto& p : monthly_median_series(agg, isp, country)) {
      ym.values.emplace_back(p.year_month.str());
      med.values.emplace_back(p.median_mbps);
      isp_col.values.emplace_back(isp);
      hh.values.emplace_back(static_cast<std::int64_t>(p.households));
    }
  }
  s.columns = {std::move(ym), std::move(med), std::move(isp_col), std::move(hh)};
  return s;
}

PlotSeries ccdf_plot(std::span<const HouseholdMonth> agg, std::optional<int> year) {
  PlotSeries s;
  s.kind = SeriesKind::Ccdf;
  s.metadata = {{"window", year ? std::to_string(*year) : std::string("all")}};
  Column th{"threshold", {}}, fr{"fraction", {}};
  for (const auto& p : test_count_ccdf(agg, year)) {
    th.values.emplace_back(p.threshold);
    fr.values.emplace_back(p.fraction);
  }
  s.columns = {std::move(th), std::move(fr)};
  return s;
}

PlotSeries density_plot(std::span<const TestRecord> records, std::string_view attribute,
                        std::span<const std::string> isps, std::size_t bins) {
  if (bins == 0) throw Error("density needs at least one bin");
  PlotSeries s;
  s.kind = SeriesKind::Density;
  s.metadata = {{"attribute", std::string(attribute)}};
  const std::set<std::string, std::less<>> wanted(isps.begin(), isps.end());
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& r : records) {
    if (!wanted.contains(r.isp)) continue;
    const double v = attribute_of(r, attribute);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Column isp_col{"isp", {}}, bl{"bin_low", {}}, bh{"bin_high", {}}, den{"density", {}};
  if (lo <= hi) {
    if (hi == lo) hi = lo + 1.0;
    const double width = (hi - lo) / static_cast<double>(bins);
    for (const auto& isp : isps) {
      std::vector<std::size_t> counts(bins, 0);
      std::size_t total = 0;
      for (const auto& r : records) {
        if (r.isp != isp) continue;
        auto b = static_cast<std::size_t>((attribute_of(r, attribute) - lo) / width);
        counts[std::min(b, bins - 1)]++;
        ++total;
      }
      for (std::size_t b = 0; b < bins; ++b) {
        isp_col.values.emplace_back(isp);
        bl.values.emplace_back(lo + width * static_cast<double>(b));
        bh.values.emplace_back(b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1));
        den.values.emplace_back(total ? static_cast<double>(counts[b]) / (static_cast<double>(total) * width) : 0.0);
      }
    }
  }
  s.columns = {std::move(isp_col), std::move(bl), std::move(bh), std::move(den)};
  return s;
}

PlotSeries scatter_facet_plot(std::span<const TestRecord> records, std::string_view isp, YearMonth month) {
  PlotSeries s;
  s.kind = SeriesKind::ScatterFacet;
  s.metadata = {{"isp", std::string(isp)}, {"year_month", month.str()}};
  std::vector<const TestRecord*> hits;
  for (const auto& r : records)
    if (r.isp == isp && r.year_month() == month) hits.push_back(&r);
  std::stable_sort(hits.begin(), hits.end(), [](const TestRecord* a, const TestRecord* b) {
    return a->local_time() < b->local_time();
  });
  Column day{"day", {}}, hour{"local_hour", {}}, speed{"download_mbps", {}}, ip{"ip", {}}, peak{"peak", {}};
  for (const auto* r : hits) {
    day.values.emplace_back(static_cast<std::int64_t>(r->day_of_month()));
    hour.values.emplace_back(static_cast<std::int64_t>(r->local_hour));
    speed.values.emplace_back(r->download_mbps);
    ip.values.emplace_back(r->client_ip);
    peak.values.emplace_back(static_cast<std::int64_t>(r->peak()));
  }
  s.columns = {std::move(day), std::move(hour), std::move(speed), std::move(ip), std::move(peak)};
  return s;
}

PlotSeries rho_hist_plot(std::span<const HouseholdProfile> profiles, std::string_view isp, double bin_width) {
  PlotSeries s;
  s.kind = SeriesKind::RhoHist;
  s.metadata = {{"isp", std::string(isp)}, {"bin_width", format_double(bin_width)}};
  std::vector<double> rhos;
  for (const auto& p : profiles)
    if (p.isp == isp && p.rho) rhos.push_back(*p.rho);
  const auto h = rho_histogram(rhos, bin_width);
  Column bl{"bin_low", {}}, bh{"bin_high", {}}, ct{"count", {}}, den{"density", {}};
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    bl.values.emplace_back(h.edges[b]);
    bh.values.emplace_back(h.edges[b + 1]);
    ct.values.emplace_back(static_cast<std::int64_t>(h.counts[b]));
    den.values.emplace_back(h.density[b]);
  }
  s.columns = {std::move(bl), std::move(bh), std::move(ct), std::move(den)};
  return s;
}

PlotSeries pair_forest_plot(std::span<const RankedRow> rows) {
  PlotSeries s;
  s.kind = SeriesKind::PairForest;
  std::vector<Column> cols;
  for (auto name : {"pair_id", "naive", "ate_r", "ci_lo", "ci_hi", "ate_nr", "ci_lo_nr", "ci_hi_nr", "treatment",
                    "control", "tier_bin", "status"})
    cols.push_back(Column{name, {}});
  for (const auto& r : rows) {
    const auto& wr = r.with_replacement;
    const auto& nr = r.without_replacement;
    cols[0].values.emplace_back(static_cast<std::int64_t>(r.pair_id));
    cols[1].values.push_back(opt(r.naive_diff_mbps));
    cols[2].values.push_back(opt(wr.ate_mbps));
    cols[3].values.push_back(wr.ci95 ? Cell{wr.ci95->first} : Cell{});
    cols[4].values.push_back(wr.ci95 ? Cell{wr.ci95->second} : Cell{});
    cols[5].values.push_back(opt(nr.ate_mbps));
    cols[6].values.push_back(nr.ci95 ? Cell{nr.ci95->first} : Cell{});
    cols[7].values.push_back(nr.ci95 ? Cell{nr.ci95->second} : Cell{});
    cols[8].values.emplace_back(r.config.treatment_isp);
    cols[9].values.emplace_back(r.config.control_isp);
    cols[10].values.emplace_back(r.config.tier_bin);
    cols[11].values.emplace_back(r.status);
  }
  s.columns = std::move(cols);
  return s;
}

}  // namespace debias

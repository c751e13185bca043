#include "debias/household.hpp"

#include <algorithm>
#include <array>
#include <map>

#include "debias/stats.hpp"

namespace debias {

OsClass modal_os(std::span<const OsClass> values) {
  std::array<std::size_t, 3> counts{};
  for (auto os : values) ++counts[static_cast<std::size_t>(os)];
  std::size_t best = 0;
  for (std::size_t i = 1; i < counts.size(); ++i)
    if (counts[i] > counts[best]) best = i;
  return static_cast<OsClass>(best);
}

std::vector<HouseholdMonth> aggregate_monthly(std::span<const TestRecord> records, MonthlyStat stat) {
  std::map<std::pair<std::string_view, YearMonth>, std::vector<const TestRecord*>> groups;
  for (const auto& r : records) groups[{r.client_ip, r.year_month()}].push_back(&r);

  std::vector<HouseholdMonth> out;
  out.reserve(groups.size());
  std::vector<double> speeds;
  std::vector<OsClass> oses;
  for (const auto& [key, tests] : groups) {
    HouseholdMonth h;
    h.client_ip = std::string(key.first);
    h.year_month = key.second;
    h.isp = tests.front()->isp;
    h.country = tests.front()->country;
    h.test_count = static_cast<std::int64_t>(tests.size());
    speeds.clear();
    oses.clear();
    double rtt = 0, rwnd = 0, mss = 0;
    for (const auto* t : tests) {
      speeds.push_back(t->download_mbps);
      oses.push_back(t->os_class);
      rtt += t->min_rtt_ms;
      rwnd += static_cast<double>(t->rwnd_bytes);
      mss += static_cast<double>(t->mss_bytes);
      if (!t->peak()) ++h.off_peak_test_count;
    }
    const auto [lo, hi] = std::minmax_element(speeds.begin(), speeds.end());
    const double value = stat == MonthlyStat::Mean ? stats::mean(speeds) : stats::median(speeds);
    h.mean_speed_mbps = std::clamp(value, *lo, *hi);
    const auto n = static_cast<double>(tests.size());
    h.covariates = CovariateSummary{rtt / n, rwnd / n, mss / n, modal_os(oses)};
    out.push_back(std::move(h));
  }
  return out;
}

std::vector<MedianPoint> monthly_median_series(std::span<const HouseholdMonth> agg, std::string_view isp,
                                               std::string_view country) {
  std::map<YearMonth, std::vector<double>> by_month;
  for (const auto& h : agg) {
    if (h.isp != isp) continue;
    if (!country.empty() && h.country != country) continue;
    by_month[h.year_month].push_back(h.mean_speed_mbps);
  }
  std::vector<MedianPoint> out;
  for (auto& [ym, values] : by_month) out.push_back({ym, stats::median(values), values.size()});
  return out;
}

double ccdf_at(std::span<const std::int64_t> counts, std::int64_t threshold) {
  if (counts.empty()) return 0.0;
  const auto above = std::count_if(counts.begin(), counts.end(), [&](auto c) { return c > threshold; });
  return static_cast<double>(above) / static_cast<double>(counts.size());
}

std::vector<CcdfPoint> test_count_ccdf(std::span<const HouseholdMonth> agg, std::optional<int> year) {
  std::map<std::pair<std::string_view, int>, std::int64_t> per_household;
  for (const auto& h : agg) {
    if (year && h.year_month.year != *year) continue;
    per_household[{h.client_ip, h.year_month.year}] += h.test_count;
  }
  std::vector<std::int64_t> counts;
  counts.reserve(per_household.size());
  for (const auto& [key, c] : per_household) counts.push_back(c);
  std::sort(counts.begin(), counts.end());

  std::vector<CcdfPoint> out;
  if (counts.empty()) return out;
  out.push_back({0, 1.0});
  const auto n = static_cast<double>(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (i + 1 < counts.size() && counts[i + 1] == counts[i]) continue;
    if (counts[i] == 0) continue;
    out.push_back({counts[i], static_cast<double>(counts.size() - i - 1) / n});
  }
  return out;
}

}  // namespace debias

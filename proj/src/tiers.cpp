#include "debias/tiers.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include "debias/csv.hpp"
#include "debias/stats.hpp"

namespace debias {

std::optional<double> pearson_rho(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error("pearson_rho: length mismatch");
  if (xs.size() < 2) return std::nullopt;
  // Two passes: centring first keeps large offsets from swamping the co-moments.
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double thompson_tau(std::size_t n, double alpha) {
  if (n < 3) throw Error("thompson_tau needs n >= 3");
  const double nd = static_cast<double>(n);
  const double t = stats::student_t_critical(alpha, nd - 2.0);
  return t * (nd - 1.0) / (std::sqrt(nd) * std::sqrt(nd - 2.0 + t * t));
}

TauResult reject_outliers_tau(std::span<const double> speeds, double alpha) {
  TauResult res;
  res.retained.assign(speeds.begin(), speeds.end());
  while (res.retained.size() >= 3) {
    const double m = stats::mean(res.retained);
    const double sd = stats::sample_sd(res.retained);
    std::size_t worst = 0;
    double worst_dev = -1.0;
    for (std::size_t i = 0; i < res.retained.size(); ++i) {
      const double dev = std::fabs(res.retained[i] - m);
      if (dev > worst_dev) {
        worst_dev = dev;
        worst = i;
      }
    }
    if (!(worst_dev > thompson_tau(res.retained.size(), alpha) * sd)) break;
    res.rejected.push_back(res.retained[worst]);
    res.retained.erase(res.retained.begin() + static_cast<std::ptrdiff_t>(worst));
    ++res.rounds;
  }
  return res;
}

// ---------------------------------------------------------------------------

TierBins::TierBins(std::vector<double> edges) : edges_(std::move(edges)) {
  if (edges_.size() < 2) throw Error("tier bins need at least two edges");
  if (edges_.front() != 0.0) throw Error("first tier edge must be 0");
  for (std::size_t i = 1; i < edges_.size(); ++i)
    if (!(edges_[i] > edges_[i - 1])) throw Error("tier edges must be strictly increasing");
}

TierBins TierBins::defaults() {
  return TierBins(std::vector<double>{0, 8, 12, 20, 25, 30, 50, 75, 100, 1000});
}

TierBins TierBins::parse(std::string_view text) {
  text = trim(text);
  if (text.empty() || to_lower(text) == "default") return defaults();
  std::vector<double> edges;
  const auto parts = csv::split_line(text);
  if (!parts) throw Error("bad tier bins");
  for (const auto& p : *parts) {
    const auto v = try_parse_double(p);
    if (!v) throw Error("bad tier edge '" + p + "'");
    edges.push_back(*v);
  }
  return TierBins(std::move(edges));
}

std::optional<std::size_t> TierBins::index_of(double mbps) const {
  if (!(mbps > edges_.front()) || mbps > edges_.back()) return std::nullopt;
  const auto it = std::lower_bound(edges_.begin(), edges_.end(), mbps);
  return static_cast<std::size_t>(it - edges_.begin()) - 1;
}

std::string TierBins::label(std::size_t bin) const {
  return format_double(low(bin)) + "-" + format_double(high(bin));
}

std::size_t TierBins::parse_label(std::string_view text) const {
  text = trim(text);
  const auto dash = text.find('-', 1);
  if (dash == std::string_view::npos) throw Error("bad tier bin label '" + std::string(text) + "'");
  const auto lo = try_parse_double(text.substr(0, dash));
  const auto hi = try_parse_double(text.substr(dash + 1));
  for (std::size_t b = 0; lo && hi && b < size(); ++b)
    if (low(b) == *lo && high(b) == *hi) return b;
  throw Error("no tier bin '" + std::string(text) + "'");
}

std::int64_t TierConfig::threshold_for(std::string_view country) const {
  if (min_tests) return *min_tests;
  const auto it = min_tests_by_country.find(country);
  return it == min_tests_by_country.end() ? default_min_tests : it->second;
}

// ---------------------------------------------------------------------------

HouseholdProfile estimate_speed_tier(std::span<const TestRecord> tests, const TierConfig& cfg) {
  HouseholdProfile p;
  if (tests.empty()) throw Error("estimate_speed_tier: no tests");
  p.client_ip = tests.front().client_ip;
  p.isp = tests.front().isp;
  p.country = tests.front().country;
  p.annual_test_count = static_cast<std::int64_t>(tests.size());

  std::vector<double> speeds, congestion;
  speeds.reserve(tests.size());
  congestion.reserve(tests.size());
  for (const auto& t : tests) {
    if (t.client_ip != p.client_ip) throw Error("estimate_speed_tier: tests from several IPs");
    speeds.push_back(t.download_mbps);
    congestion.push_back(static_cast<double>(t.congestion_count));
    if (!t.peak()) ++p.off_peak_test_count;
  }
  p.max_observed_mbps = *std::max_element(speeds.begin(), speeds.end());
  p.rho = pearson_rho(speeds, congestion);
  p.single_household = classify_household(p.rho);

  auto reject = [&](std::string_view why) {
    p.reason = std::string(why);
    return p;
  };
  if (p.annual_test_count < cfg.threshold_for(p.country)) return reject(reasons::kBelowThreshold);
  if (p.off_peak_test_count == 0) return reject(reasons::kNoOffPeak);

  double tier = p.max_observed_mbps;
  if (cfg.refined) {
    if (!p.rho) return reject(reasons::kRhoUndefined);
    if (!p.single_household) return reject(reasons::kSharedIp);
    const auto tau = reject_outliers_tau(speeds, cfg.alpha);
    p.outliers_rejected = tau.rejected.size();
    tier = *std::max_element(tau.retained.begin(), tau.retained.end());
  }
  const auto bin = cfg.bins.index_of(tier);
  if (!bin) return reject(reasons::kOutsideBins);
  p.tier_mbps = tier;
  p.tier_bin = bin;
  p.tier_label = cfg.bins.label(*bin);
  p.eligible = true;
  return p;
}

std::vector<HouseholdProfile> profile_households(std::span<const TestRecord> records, const TierConfig& cfg) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].client_ip < records[b].client_ip; });
  std::vector<HouseholdProfile> out;
  std::vector<TestRecord> group;
  for (std::size_t i = 0; i < order.size();) {
    group.clear();
    std::size_t j = i;
    while (j < order.size() && records[order[j]].client_ip == records[order[i]].client_ip)
      group.push_back(records[order[j++]]);
    out.push_back(estimate_speed_tier(group, cfg));
    i = j;
  }
  return out;
}

Histogram rho_histogram(std::span<const double> rhos, double bin_width) {
  if (!(bin_width > 0.0) || bin_width > 2.0) throw Error("rho histogram bin width must be in (0, 2]");
  const auto bins = static_cast<std::size_t>(std::ceil(2.0 / bin_width - 1e-9));
  Histogram h;
  h.counts.assign(bins, 0);
  h.density.assign(bins, 0.0);
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(std::min(1.0, -1.0 + static_cast<double>(i) * bin_width));
  for (double r : rhos) {
    if (r < -1.0 || r > 1.0) throw Error("rho outside [-1, 1]");
    auto b = static_cast<std::size_t>(std::floor((r + 1.0) / bin_width));
    h.counts[std::min(b, bins - 1)]++;
  }
  if (!rhos.empty()) {
    for (std::size_t b = 0; b < bins; ++b)
      h.density[b] = static_cast<double>(h.counts[b]) /
                     (static_cast<double>(rhos.size()) * (h.edges[b + 1] - h.edges[b]));
  }
  return h;
}

std::map<std::string, Histogram> rho_distribution(std::span<const HouseholdProfile> profiles, double bin_width) {
  std::map<std::string, std::vector<double>> by_isp;
  for (const auto& p : profiles)
    if (p.rho) by_isp[p.isp].push_back(*p.rho);
  std::map<std::string, Histogram> out;
  for (const auto& [isp, rhos] : by_isp) out.emplace(isp, rho_histogram(rhos, bin_width));
  return out;
}

std::vector<std::pair<YearMonth, std::optional<double>>> monthly_rho(std::span<const TestRecord> tests) {
  std::map<YearMonth, std::pair<std::vector<double>, std::vector<double>>> by_month;
  for (const auto& t : tests) {
    auto& [s, c] = by_month[t.year_month()];
    s.push_back(t.download_mbps);
    c.push_back(static_cast<double>(t.congestion_count));
  }
  std::vector<std::pair<YearMonth, std::optional<double>>> out;
  for (const auto& [ym, sc] : by_month) out.emplace_back(ym, pearson_rho(sc.first, sc.second));
  return out;
}

void write_profiles(std::ostream& out, std::span<const HouseholdProfile> profiles) {
  out << kProfileHeader << '\n';
  for (const auto& p : profiles) {
    csv::write_row(out, {p.client_ip, p.isp, std::to_string(p.annual_test_count), p.rho ? format_double(*p.rho) : "",
                         p.single_household ? "true" : "false", p.eligible ? "true" : "false", p.reason,
                         p.tier_mbps ? format_double(*p.tier_mbps) : "", p.tier_label});
  }
}

std::vector<HouseholdProfile> read_profiles(std::istream& in) {
  const auto t = csv::read_table(in);
  const auto c_ip = t.require("ip"), c_isp = t.require("isp"), c_tests = t.require("tests"),
             c_rho = t.require("rho"), c_single = t.require("single_household"), c_elig = t.require("eligible"),
             c_reason = t.require("reason"), c_tier = t.require("tier_mbps"), c_bin = t.require("tier_bin");
  std::vector<HouseholdProfile> out;
  for (const auto& row : t.rows) {
    HouseholdProfile p;
    p.client_ip = row[c_ip];
    p.isp = row[c_isp];
    const auto n = try_parse_int(row[c_tests]);
    if (!n) throw Error("profiles: bad tests value '" + row[c_tests] + "'");
    p.annual_test_count = *n;
    if (!trim(row[c_rho]).empty()) {
      p.rho = try_parse_double(row[c_rho]);
      if (!p.rho) throw Error("profiles: bad rho '" + row[c_rho] + "'");
    }
    p.single_household = trim(row[c_single]) == "true";
    p.eligible = trim(row[c_elig]) == "true";
    p.reason = row[c_reason];
    if (!trim(row[c_tier]).empty()) p.tier_mbps = try_parse_double(row[c_tier]);
    p.tier_label = row[c_bin];
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace debias

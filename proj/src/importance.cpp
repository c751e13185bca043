#include "debias/importance.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <unordered_map>

#include "debias/csv.hpp"

namespace debias {

FeatureMatrix build_feature_matrix(std::span<const TestRecord> records, std::span<const HouseholdProfile> profiles) {
  std::unordered_map<std::string_view, double> tier_of;
  for (const auto& p : profiles)
    if (p.tier_mbps) tier_of.emplace(p.client_ip, *p.tier_mbps);

  std::set<std::string> isps;
  for (const auto& r : records)
    if (tier_of.contains(r.client_ip)) isps.insert(r.isp);
  std::map<std::string, double> isp_code;
  for (const auto& isp : isps) isp_code.emplace(isp, static_cast<double>(isp_code.size()));

  FeatureMatrix m;
  m.names = kImportanceFeatures;
  m.codebooks["os_class"] = {"modern", "legacy", "other"};
  m.codebooks["isp"] = std::vector<std::string>(isps.begin(), isps.end());
  for (const auto& r : records) {
    const auto it = tier_of.find(r.client_ip);
    if (it == tier_of.end()) {
      ++m.dropped_rows;
      continue;
    }
    const double row[] = {it->second,
                          static_cast<double>(r.rwnd_bytes),
                          r.min_rtt_ms,
                          static_cast<double>(r.mss_bytes),
                          static_cast<double>(static_cast<int>(r.os_class)),
                          isp_code.at(r.isp),
                          static_cast<double>(r.local_hour)};
    m.add_row(row, r.download_mbps);
  }
  return m;
}

const FeatureImportance& ImportanceReport::operator[](const std::string& name) const {
  for (const auto& f : features)
    if (f.name == name) return f;
  throw Error("no feature '" + name + "' in importance report");
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Increase {
  double mean = 0.0;
  double se = 0.0;
};

Increase permuted_increase(const RandomForest& forest, const FeatureMatrix& m, std::span<const std::size_t> cols,
                           std::size_t repeats, std::uint64_t seed, double baseline) {
  std::vector<double> inc;
  std::vector<std::size_t> perm(m.rows());
  for (std::size_t r = 0; r < repeats; ++r) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(mix(seed, r));
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto pred = forest.oob_predict(m, cols, perm);
    inc.push_back(RandomForest::oob_mse(pred, m.target) - baseline);
  }
  Increase out;
  out.mean = std::accumulate(inc.begin(), inc.end(), 0.0) / static_cast<double>(inc.size());
  if (inc.size() > 1) {
    double ss = 0.0;
    for (double v : inc) ss += (v - out.mean) * (v - out.mean);
    out.se = std::sqrt(ss / static_cast<double>(inc.size() - 1) / static_cast<double>(inc.size()));
  }
  return out;
}

}  // namespace

ImportanceReport permutation_importance(const RandomForest& forest, const FeatureMatrix& m, std::size_t repeats,
                                        std::uint64_t seed) {
  if (m.names != forest.feature_names()) throw Error("feature schema does not match the fitted forest");
  if (repeats == 0) throw Error("permutation importance needs at least one repeat");
  ImportanceReport rep;
  rep.trees = forest.trees().size();
  rep.max_depth = forest.params().max_depth;
  rep.seed = seed;
  rep.rows = m.rows();
  rep.baseline_oob_mse = RandomForest::oob_mse(forest.oob_predict(m), m.target);

  double total = 0.0;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    const std::size_t col[] = {j};
    const auto inc = permuted_increase(forest, m, col, repeats, mix(seed, 1000 + j), rep.baseline_oob_mse);
    FeatureImportance f;
    f.name = m.names[j];
    f.raw_score = inc.mean;
    f.std_error = inc.se;
    f.score = std::max(0.0, inc.mean);
    total += f.score;
    rep.features.push_back(std::move(f));
  }
  std::vector<std::size_t> order(rep.features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rep.features[a].score > rep.features[b].score; });
  for (std::size_t r = 0; r < order.size(); ++r) rep.features[order[r]].rank = r + 1;
  for (auto& f : rep.features) f.share = total > 0.0 ? f.score / total : 0.0;
  return rep;
}

double group_permutation_importance(const RandomForest& forest, const FeatureMatrix& m,
                                    std::span<const std::size_t> cols, std::size_t repeats, std::uint64_t seed) {
  if (m.names != forest.feature_names()) throw Error("feature schema does not match the fitted forest");
  const double baseline = RandomForest::oob_mse(forest.oob_predict(m), m.target);
  return std::max(0.0, permuted_increase(forest, m, cols, repeats, seed, baseline).mean);
}

void write_importance_csv(std::ostream& out, const ImportanceReport& report) {
  out << "feature,score,rank,share\n";
  for (const auto& f : report.features)
    csv::write_row(out, {f.name, format_double(f.score), std::to_string(f.rank), format_double(f.share)});
}

}  // namespace debias

#include "debias/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <unordered_map>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "debias/csv.hpp"
#include "debias/household.hpp"
#include "debias/stats.hpp"

namespace debias {

namespace {
constexpr std::array<std::string_view, 5> kCovariateNames = {"tier_mbps", "rwnd_bytes", "min_rtt_ms", "mss_bytes",
                                                             "client_limited_frac"};
constexpr std::array<std::string_view, 2> kExactNames = {"os_class", "peak_flag"};
}  // namespace

std::string_view to_string(Covariate c) { return kCovariateNames[static_cast<std::size_t>(c)]; }
std::string_view to_string(ExactCovariate c) { return kExactNames[static_cast<std::size_t>(c)]; }

Covariate parse_covariate(std::string_view name) {
  for (std::size_t i = 0; i < kCovariateNames.size(); ++i)
    if (kCovariateNames[i] == trim(name)) return static_cast<Covariate>(i);
  throw Error("unknown continuous covariate '" + std::string(name) + "'");
}

ExactCovariate parse_exact_covariate(std::string_view name) {
  for (std::size_t i = 0; i < kExactNames.size(); ++i)
    if (kExactNames[i] == trim(name)) return static_cast<ExactCovariate>(i);
  throw Error("unknown exact covariate '" + std::string(name) + "'");
}

void MatchConfig::validate() const {
  if (!(caliper_sd > 0.0) || !std::isfinite(caliper_sd)) throw Error("caliper_sd must be positive");
  if (continuous.empty()) throw Error("at least one continuous covariate is required");
  if (std::set<Covariate>(continuous.begin(), continuous.end()).size() != continuous.size())
    throw Error("duplicate continuous covariate");
  if (std::set<ExactCovariate>(exact.begin(), exact.end()).size() != exact.size())
    throw Error("duplicate exact covariate");
}

// ---------------------------------------------------------------------------

Standardization standardize(std::span<const Sample> treated, std::span<const Sample> controls) {
  Standardization s;
  const std::size_t n = treated.size() + controls.size();
  if (n == 0) return s;
  const std::size_t p = (treated.empty() ? controls : treated).front().continuous.size();
  auto sample_at = [&](std::size_t i) -> const Sample& {
    return i < treated.size() ? treated[i] : controls[i - treated.size()];
  };
  std::vector<double> column(n);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& smp = sample_at(i);
      if (smp.continuous.size() != p) throw Error("samples disagree on covariate count");
      column[i] = smp.continuous[j];
    }
    const double sd = stats::sample_sd(column);
    s.sd.push_back(sd);
    s.active.push_back(sd > 0.0);
    if (!(sd > 0.0)) s.warnings.push_back("covariate " + std::to_string(j) + " is constant; dropped from distance");
  }
  std::vector<std::size_t> act;
  for (std::size_t j = 0; j < p; ++j)
    if (s.active[j]) act.push_back(j);
  s.z.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(act.size()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < act.size(); ++k)
      s.z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = sample_at(i).continuous[act[k]] / s.sd[act[k]];
  return s;
}

InverseCovariance inverse_covariance(const Eigen::MatrixXd& data) {
  InverseCovariance out;
  const auto p = data.cols();
  if (p == 0) return out;
  if (data.rows() < 2) throw Error("covariance needs at least two samples");
  const Eigen::RowVectorXd mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - mean;
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(data.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
  const double max_ev = eig.eigenvalues().maxCoeff();
  const double min_ev = eig.eigenvalues().minCoeff();
  if (!(min_ev > 1e-10 * std::max(max_ev, 0.0)) || !(max_ev > 0.0)) {
    double ridge = 1e-8 * cov.trace() / static_cast<double>(p);
    if (!(ridge > 0.0)) ridge = 1e-8;
    cov.diagonal().array() += ridge;
    out.regularized = true;
  }
  out.inverse = cov.inverse();
  // Symmetrize away round-off so d(x, y) == d(y, x) bit for bit.
  out.inverse = (0.5 * (out.inverse + out.inverse.transpose())).eval();
  return out;
}

double mahalanobis(std::span<const double> x, std::span<const double> y, const Eigen::MatrixXd& inv_cov) {
  const auto p = static_cast<std::size_t>(inv_cov.rows());
  if (x.size() != p || y.size() != p || static_cast<std::size_t>(inv_cov.cols()) != p)
    throw Error("mahalanobis: dimension mismatch");
  double d2 = 0.0;
  for (std::size_t a = 0; a < p; ++a) {
    const double da = x[a] - y[a];
    double row = 0.0;
    for (std::size_t b = 0; b < p; ++b) row += inv_cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * (x[b] - y[b]);
    d2 += da * row;
  }
  return std::sqrt(std::max(0.0, d2));
}

std::vector<std::size_t> treated_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Explicit Fisher-Yates over raw engine output keeps the order independent of library shuffles.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

// ---------------------------------------------------------------------------

namespace {

struct Bucket {
  std::vector<std::size_t> controls;  // positions, sorted by the key covariate then id
  std::vector<double> keys;
};

}  // namespace

MatchOutcome match_samples(std::span<const Sample> treated, std::span<const Sample> controls,
                           const MatchConfig& cfg) {
  if (!(cfg.caliper_sd > 0.0)) throw Error("caliper_sd must be positive");
  MatchOutcome out;
  out.treated_total = treated.size();
  out.control_total = controls.size();
  if (treated.empty() || controls.empty()) {
    out.warnings.push_back("empty treatment or control group");
    return out;
  }

  const auto std_info = standardize(treated, controls);
  out.warnings = std_info.warnings;
  for (std::size_t j = 0; j < std_info.active.size(); ++j)
    if (!std_info.active[j]) out.dropped_covariates.push_back(j);
  const std::size_t p = std_info.sd.size();
  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < p; ++j)
    if (std_info.active[j]) active.push_back(j);

  Eigen::MatrixXd inv;
  if (!active.empty()) {
    auto ic = inverse_covariance(std_info.z);
    inv = std::move(ic.inverse);
    out.regularized = ic.regularized;
    if (ic.regularized) out.warnings.push_back("singular covariance; ridge regularization applied");
  }
  const auto z_row = [&](std::size_t row) {
    std::vector<double> v(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) v[k] = std_info.z(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(k));
    return v;
  };

  std::vector<double> width(p);
  for (std::size_t j = 0; j < p; ++j) width[j] = cfg.caliper_sd * std_info.sd[j];

  // Bucket controls by exact key; inside a bucket, sort on the first active covariate so the caliper
  // window on that covariate becomes a contiguous range.
  std::map<std::vector<int>, Bucket> buckets;
  for (std::size_t c = 0; c < controls.size(); ++c) buckets[controls[c].exact].controls.push_back(c);
  const bool keyed = !active.empty();
  const std::size_t key_col = keyed ? active.front() : 0;
  for (auto& [key, b] : buckets) {
    if (keyed) {
      std::sort(b.controls.begin(), b.controls.end(), [&](std::size_t a, std::size_t c) {
        const double xa = controls[a].continuous[key_col], xc = controls[c].continuous[key_col];
        return xa != xc ? xa < xc : controls[a].id < controls[c].id;
      });
      for (auto c : b.controls) b.keys.push_back(controls[c].continuous[key_col]);
    }
  }

  std::vector<std::vector<double>> control_z(controls.size());
  for (std::size_t c = 0; c < controls.size(); ++c) control_z[c] = z_row(treated.size() + c);

  std::vector<bool> used(controls.size(), false);
  std::vector<bool> touched(controls.size(), false);
  for (std::size_t t : treated_order(treated.size(), cfg.seed)) {
    const auto& ts = treated[t];
    const auto it = buckets.find(ts.exact);
    if (it == buckets.end()) continue;
    const auto& b = it->second;
    std::size_t first = 0, last = b.controls.size();
    if (keyed) {
      const double x = ts.continuous[key_col];
      const double slack = width[key_col] * (1.0 + 1e-9) + 1e-12 * std::fabs(x);
      first = static_cast<std::size_t>(std::lower_bound(b.keys.begin(), b.keys.end(), x - slack) - b.keys.begin());
      last = static_cast<std::size_t>(std::upper_bound(b.keys.begin(), b.keys.end(), x + slack) - b.keys.begin());
    }
    const auto tz = z_row(t);
    std::optional<std::size_t> best;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = first; k < last; ++k) {
      const std::size_t c = b.controls[k];
      if (!cfg.with_replacement && used[c]) continue;
      const auto& cs = controls[c];
      bool admissible = true;
      for (std::size_t j : active)
        if (!(std::fabs(ts.continuous[j] - cs.continuous[j]) <= width[j])) {
          admissible = false;
          break;
        }
      if (!admissible) continue;
      const double d = active.empty() ? 0.0 : mahalanobis(tz, control_z[c], inv);
      if (!best || d < best_d || (d == best_d && cs.id < controls[*best].id)) {
        best = c;
        best_d = d;
      }
    }
    if (!best) continue;
    out.pairs.push_back(MatchedPair{ts.id, controls[*best].id, best_d, t, *best});
    if (!cfg.with_replacement) used[*best] = true;
    touched[*best] = true;
  }
  out.matched_treated = out.pairs.size();
  out.matched_controls = static_cast<std::size_t>(std::count(touched.begin(), touched.end(), true));
  out.discard_rate = 1.0 - static_cast<double>(out.matched_treated + out.matched_controls) /
                               static_cast<double>(treated.size() + controls.size());
  return out;
}

void estimate_ate(MatchOutcome& outcome, std::span<const Sample> treated, std::span<const Sample> controls,
                  const MatchConfig& cfg) {
  outcome.ate_mbps.reset();
  outcome.ci95.reset();
  if (outcome.pairs.empty()) return;
  std::vector<double> diffs;
  diffs.reserve(outcome.pairs.size());
  for (const auto& pr : outcome.pairs)
    diffs.push_back(treated[pr.treated_index].outcome - controls[pr.control_index].outcome);
  const double ate = stats::mean(diffs);
  outcome.ate_mbps = ate;
  if (diffs.size() < 2 || cfg.bootstrap_resamples == 0) return;

  // Pair-level percentile bootstrap; each treated unit carries its matched control.
  std::mt19937_64 rng(cfg.seed ^ 0xb0075742ULL);
  const std::size_t n = diffs.size();
  std::vector<double> means(cfg.bootstrap_resamples);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += diffs[static_cast<std::size_t>(rng() % n)];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double lo = stats::sorted_quantile(means, 0.025);
  const double hi = stats::sorted_quantile(means, 0.975);
  outcome.ci95 = std::make_pair(std::min(lo, ate), std::max(hi, ate));
}

std::vector<BalanceRow> balance_report(std::span<const Sample> treated, std::span<const Sample> controls,
                                       const MatchOutcome& outcome, std::span<const std::string> names) {
  std::vector<BalanceRow> rows;
  if (treated.empty() || controls.empty()) return rows;
  const std::size_t pc = treated.front().continuous.size();
  const std::size_t pe = treated.front().exact.size();
  if (names.size() != pc + pe) throw Error("balance_report: name count does not match covariates");
  auto value = [&](const Sample& s, std::size_t j) {
    return j < pc ? s.continuous[j] : static_cast<double>(s.exact[j - pc]);
  };
  std::vector<double> t_all, c_all, t_after, c_after;
  for (std::size_t j = 0; j < pc + pe; ++j) {
    t_all.clear();
    c_all.clear();
    t_after.clear();
    c_after.clear();
    for (const auto& s : treated) t_all.push_back(value(s, j));
    for (const auto& s : controls) c_all.push_back(value(s, j));
    for (const auto& pr : outcome.pairs) {
      t_after.push_back(value(treated[pr.treated_index], j));
      c_after.push_back(value(controls[pr.control_index], j));
    }
    const double pooled = std::sqrt(0.5 * (stats::sample_variance(t_all) + stats::sample_variance(c_all)));
    auto smd = [&](std::span<const double> a, std::span<const double> b) {
      if (a.empty() || b.empty()) return 0.0;
      const double diff = stats::mean(a) - stats::mean(b);
      return pooled > 0.0 ? diff / pooled : 0.0;
    };
    BalanceRow row;
    row.covariate = names[j];
    row.smd_before = smd(t_all, c_all);
    row.smd_after = smd(t_after, c_after);
    row.p_after = stats::welch_p_value(t_after, c_after);
    rows.push_back(std::move(row));
  }
  return rows;
}

MatchOutcome run_matching(std::span<const Sample> treated, std::span<const Sample> controls,
                          const MatchConfig& cfg, std::span<const std::string> names) {
  cfg.validate();
  auto out = match_samples(treated, controls, cfg);
  for (std::size_t j : out.dropped_covariates)
    if (j < names.size()) {
      const std::string generic = "covariate " + std::to_string(j) + " ";
      for (auto& w : out.warnings)
        if (w.starts_with(generic)) w = "covariate " + names[j] + " " + w.substr(generic.size());
    }
  if (!treated.empty() && !controls.empty()) {
    double st = 0.0, sc = 0.0;
    for (const auto& s : treated) st += s.outcome;
    for (const auto& s : controls) sc += s.outcome;
    out.naive_diff_mbps = st / static_cast<double>(treated.size()) - sc / static_cast<double>(controls.size());
  }
  estimate_ate(out, treated, controls, cfg);
  out.balance = balance_report(treated, controls, out, names);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double covariate_value(Covariate c, const TestRecord& r, double tier) {
  switch (c) {
    case Covariate::TierMbps: return tier;
    case Covariate::RwndBytes: return static_cast<double>(r.rwnd_bytes);
    case Covariate::MinRttMs: return r.min_rtt_ms;
    case Covariate::MssBytes: return static_cast<double>(r.mss_bytes);
    case Covariate::ClientLimitedFrac: return r.client_limited_frac;
  }
  return 0.0;
}

}  // namespace

SampleSet build_samples(std::span<const TestRecord> records, std::span<const HouseholdProfile> profiles,
                        const MatchConfig& cfg) {
  cfg.validate();
  std::vector<ExactCovariate> exact = cfg.exact;
  if (cfg.household_level)
    exact.erase(std::remove(exact.begin(), exact.end(), ExactCovariate::PeakFlag), exact.end());

  SampleSet set;
  for (auto c : cfg.continuous) set.names.emplace_back(to_string(c));
  for (auto e : exact) set.names.emplace_back(to_string(e));

  std::unordered_map<std::string_view, std::size_t> profile_of;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const auto& p = profiles[i];
    if (!p.eligible || !p.tier_mbps) continue;
    if (p.isp != cfg.treatment_isp && p.isp != cfg.control_isp) continue;
    if (!cfg.tier_bin.empty() && p.tier_label != cfg.tier_bin) continue;
    profile_of.emplace(p.client_ip, i);
  }

  if (!cfg.household_level) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      const auto it = profile_of.find(r.client_ip);
      if (it == profile_of.end()) continue;
      if (cfg.year && r.year_month().year != *cfg.year) continue;
      Sample s;
      s.id = i;
      s.outcome = r.download_mbps;
      for (auto c : cfg.continuous) s.continuous.push_back(covariate_value(c, r, *profiles[it->second].tier_mbps));
      for (auto e : exact)
        s.exact.push_back(e == ExactCovariate::OsClass ? static_cast<int>(r.os_class) : (r.peak() ? 1 : 0));
      (r.isp == cfg.treatment_isp ? set.treated : set.controls).push_back(std::move(s));
    }
    return set;
  }

  // Household level: one sample per eligible IP from its tests in the window.
  std::map<std::size_t, std::vector<const TestRecord*>> tests_of;
  for (const auto& r : records) {
    const auto it = profile_of.find(r.client_ip);
    if (it == profile_of.end()) continue;
    if (cfg.year && r.year_month().year != *cfg.year) continue;
    tests_of[it->second].push_back(&r);
  }
  for (const auto& [pi, tests] : tests_of) {
    const auto& prof = profiles[pi];
    Sample s;
    s.id = pi;
    std::vector<double> sums(cfg.continuous.size(), 0.0);
    std::vector<OsClass> oses;
    for (const auto* r : tests) {
      s.outcome += r->download_mbps;
      for (std::size_t k = 0; k < cfg.continuous.size(); ++k) sums[k] += covariate_value(cfg.continuous[k], *r, *prof.tier_mbps);
      oses.push_back(r->os_class);
    }
    const auto n = static_cast<double>(tests.size());
    s.outcome /= n;
    for (double v : sums) s.continuous.push_back(v / n);
    for (auto e : exact) {
      (void)e;
      s.exact.push_back(static_cast<int>(modal_os(oses)));
    }
    (prof.isp == cfg.treatment_isp ? set.treated : set.controls).push_back(std::move(s));
  }
  return set;
}

std::vector<RankedRow> rank_pairs(std::span<const MatchConfig> configs, std::span<const TestRecord> records,
                                  std::span<const HouseholdProfile> profiles) {
  std::vector<RankedRow> rows;
  for (const auto& cfg : configs) {
    RankedRow row;
    row.config = cfg;
    const auto set = build_samples(records, profiles, cfg);
    auto r_cfg = cfg, nr_cfg = cfg;
    r_cfg.with_replacement = true;
    nr_cfg.with_replacement = false;
    row.with_replacement = run_matching(set.treated, set.controls, r_cfg, set.names);
    row.without_replacement = run_matching(set.treated, set.controls, nr_cfg, set.names);
    if (set.treated.empty() || set.controls.empty()) {
      row.status = "no samples in bin";
    } else {
      row.naive_diff_mbps = row.with_replacement.naive_diff_mbps;
      row.status = row.with_replacement.ate_mbps && row.without_replacement.ate_mbps ? "ok"
                                                                                    : "insufficient common support";
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const RankedRow& a, const RankedRow& b) {
    if (a.naive_diff_mbps.has_value() != b.naive_diff_mbps.has_value()) return a.naive_diff_mbps.has_value();
    return a.naive_diff_mbps && *a.naive_diff_mbps < *b.naive_diff_mbps;
  });
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].pair_id = i + 1;
  return rows;
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json to_json(const MatchConfig& cfg) {
  nlohmann::ordered_json j;
  j["treatment_isp"] = cfg.treatment_isp;
  j["control_isp"] = cfg.control_isp;
  j["tier_bin"] = cfg.tier_bin;
  j["year"] = cfg.year ? nlohmann::ordered_json(*cfg.year) : nlohmann::ordered_json(nullptr);
  j["caliper_sd"] = cfg.caliper_sd;
  j["replacement"] = cfg.with_replacement ? "r" : "nr";
  auto cont = nlohmann::ordered_json::array();
  for (auto c : cfg.continuous) cont.push_back(std::string(to_string(c)));
  j["continuous_covariates"] = cont;
  auto ex = nlohmann::ordered_json::array();
  for (auto e : cfg.exact) ex.push_back(std::string(to_string(e)));
  j["exact_covariates"] = ex;
  j["seed"] = cfg.seed;
  j["bootstrap_resamples"] = cfg.bootstrap_resamples;
  j["household_level"] = cfg.household_level;
  return j;
}

MatchConfig match_config_from_json(const nlohmann::json& j, const MatchConfig& defaults) {
  MatchConfig cfg = defaults;
  if (!j.is_object()) throw Error("match config must be a JSON object");
  static const std::set<std::string> known = {
      "treatment_isp", "treat", "control_isp", "control", "tier_bin", "bin", "year", "caliper_sd", "caliper",
      "replacement", "continuous_covariates", "exact_covariates", "seed", "bootstrap_resamples", "household_level"};
  for (const auto& [k, _] : j.items())
    if (!known.contains(k)) throw Error("unknown match config key '" + k + "'");
  try {
    if (j.contains("treatment_isp")) cfg.treatment_isp = j.at("treatment_isp").get<std::string>();
    if (j.contains("treat")) cfg.treatment_isp = j.at("treat").get<std::string>();
    if (j.contains("control_isp")) cfg.control_isp = j.at("control_isp").get<std::string>();
    if (j.contains("control")) cfg.control_isp = j.at("control").get<std::string>();
    if (j.contains("tier_bin")) cfg.tier_bin = j.at("tier_bin").get<std::string>();
    if (j.contains("bin")) cfg.tier_bin = j.at("bin").get<std::string>();
    if (j.contains("year") && !j.at("year").is_null()) cfg.year = j.at("year").get<int>();
    if (j.contains("caliper_sd")) cfg.caliper_sd = j.at("caliper_sd").get<double>();
    if (j.contains("caliper")) cfg.caliper_sd = j.at("caliper").get<double>();
    if (j.contains("replacement")) {
      const auto r = j.at("replacement").get<std::string>();
      if (r != "r" && r != "nr") throw Error("replacement must be 'r' or 'nr'");
      cfg.with_replacement = r == "r";
    }
    if (j.contains("continuous_covariates")) {
      cfg.continuous.clear();
      for (const auto& c : j.at("continuous_covariates")) cfg.continuous.push_back(parse_covariate(c.get<std::string>()));
    }
    if (j.contains("exact_covariates")) {
      cfg.exact.clear();
      for (const auto& c : j.at("exact_covariates")) cfg.exact.push_back(parse_exact_covariate(c.get<std::string>()));
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("bootstrap_resamples")) cfg.bootstrap_resamples = j.at("bootstrap_resamples").get<std::size_t>();
    if (j.contains("household_level")) cfg.household_level = j.at("household_level").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad match config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

nlohmann::ordered_json to_json(const MatchOutcome& o, const MatchConfig& cfg) {
  nlohmann::ordered_json j;
  j["config"] = to_json(cfg);
  j["treated_samples"] = o.treated_total;
  j["control_samples"] = o.control_total;
  j["pairs"] = o.pairs.size();
  j["matched_treated"] = o.matched_treated;
  j["matched_controls"] = o.matched_controls;
  j["discard_rate"] = o.discard_rate;
  j["naive_diff"] = o.naive_diff_mbps;
  j["ate"] = o.ate_mbps ? nlohmann::ordered_json(*o.ate_mbps) : nlohmann::ordered_json(nullptr);
  j["ci95"] = o.ci95 ? nlohmann::ordered_json::array({o.ci95->first, o.ci95->second}) : nlohmann::ordered_json(nullptr);
  j["status"] = o.ate_mbps ? "ok" : "insufficient common support";
  auto bal = nlohmann::ordered_json::array();
  for (const auto& b : o.balance)
    bal.push_back({{"covariate", b.covariate}, {"smd_before", b.smd_before}, {"smd_after", b.smd_after}, {"p_after", b.p_after}});
  j["balance"] = bal;
  j["warnings"] = o.warnings;
  return j;
}

void write_rank_table(std::ostream& out, std::span<const RankedRow> rows) {
  out << "pair_id,treatment,control,tier_bin,year,naive_diff,ate_r,ci_lo_r,ci_hi_r,discard_r,pairs_r,"
         "ate_nr,ci_lo_nr,ci_hi_nr,discard_nr,pairs_nr,status\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& r : rows) {
    const auto& a = r.with_replacement;
    const auto& b = r.without_replacement;
    csv::write_row(out, {std::to_string(r.pair_id), r.config.treatment_isp, r.config.control_isp, r.config.tier_bin,
                         r.config.year ? std::to_string(*r.config.year) : "", opt(r.naive_diff_mbps), opt(a.ate_mbps),
                         a.ci95 ? format_double(a.ci95->first) : "", a.ci95 ? format_double(a.ci95->second) : "",
                         format_double(a.discard_rate), std::to_string(a.pairs.size()), opt(b.ate_mbps),
                         b.ci95 ? format_double(b.ci95->first) : "", b.ci95 ? format_double(b.ci95->second) : "",
                         format_double(b.discard_rate), std::to_string(b.pairs.size()), r.status});
  }
}

}  // namespace debias

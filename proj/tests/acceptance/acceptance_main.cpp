// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments select criteria by number.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "debias/importance.hpp"
#include "debias/matching.hpp"
#include "debias/pipeline.hpp"
#include "debias/synth.hpp"
#include "debias/tiers.hpp"

using namespace debias;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Every pipeline run in the suite has its stage counts checked here.
std::vector<std::string> g_count_violations;
std::size_t g_pipeline_runs = 0;

PipelineResult checked_run(const PipelineConfig& cfg, const fs::path& dir) {
  auto res = run_pipeline(cfg, dir);
  const auto& c = res.counts;
  ++g_pipeline_runs;
  if (!(c.ingested <= c.raw && c.thresholded <= c.ingested && c.single_household <= c.thresholded &&
        c.matched <= c.single_household))
    g_count_violations.push_back(dir.string());
  return res;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("debias_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------
// household-level samples keyed on ground-truth covariates

const std::vector<std::string> kHouseholdNames = {"tier_mbps", "rwnd_bytes", "min_rtt_ms", "client_limited_frac",
                                                  "os_class"};

struct Groups {
  std::vector<Sample> treated, controls;
};

Groups household_groups(const SynthData& d, const std::string& treat) {
  struct Acc {
    double speed = 0, rtt = 0, clf = 0;
    int n = 0;
  };
  std::map<std::string, Acc> acc;
  for (const auto& r : d.records) {
    auto& a = acc[r.client_ip];
    a.speed += r.download_mbps;
    a.rtt += r.min_rtt_ms;
    a.clf += r.client_limited_frac;
    a.n += 1;
  }
  Groups g;
  for (const auto& h : d.truth.households) {
    const auto& a = acc.at(h.client_ip);
    Sample s;
    s.id = h.household;
    s.outcome = a.speed / a.n;
    s.continuous = {h.tier_mbps, static_cast<double>(h.rwnd_bytes), a.rtt / a.n, a.clf / a.n};
    s.exact = {static_cast<int>(h.os_class)};
    (h.isp == treat ? g.treated : g.controls).push_back(std::move(s));
  }
  return g;
}

struct Side {
  double rwnd = 150000, rtt = 25, legacy = 0.05, clf = 0.05, tier_lo = 8, tier_hi = 25;
};

IspSynth make_isp(const std::string& name, std::size_t households, double effect, const Side& s) {
  IspSynth i;
  i.name = name;
  i.households = households;
  i.effect_mbps = effect;
  i.tiers = {{s.tier_lo, s.tier_hi, 1.0, 1.0}};
  i.rwnd_median_bytes = s.rwnd;
  i.rwnd_log_sd = 0.6;
  i.rtt_median_ms = s.rtt;
  i.rtt_log_sd = 0.35;
  i.p_legacy = s.legacy;
  i.p_other = 0.05;
  i.p_modern = 1.0 - s.legacy - 0.05;
  i.client_limited_mean = s.clf;
  return i;
}

SynthSpec pair_spec(std::uint64_t seed, std::size_t households_each, double effect, const Side& treat, const Side& control) {
  SynthSpec spec;
  spec.seed = seed;
  spec.months = 1;
  spec.tests = {TestCountModel::Kind::Fixed, 8, 8, 1.0};
  spec.isps = {make_isp("T", households_each, effect, treat), make_isp("C", households_each, 0.0, control)};
  return spec;
}

// Treated ISP disadvantaged on window size, path latency and OS mix.
const Side kPoorSide{50000, 38, 0.25, 0.10, 8, 22};
const Side kRichSide{160000, 22, 0.05, 0.04, 10, 25};

MatchOutcome household_match(const SynthData& d, std::uint64_t seed, bool with_replacement, double caliper,
                             std::size_t resamples) {
  const auto g = household_groups(d, "T");
  MatchConfig cfg;
  cfg.seed = seed;
  cfg.with_replacement = with_replacement;
  cfg.caliper_sd = caliper;
  cfg.bootstrap_resamples = resamples;
  return run_matching(g.treated, g.controls, cfg, kHouseholdNames);
}

// ---------------------------------------------------------------------------

Verdict matching_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20240611);
  std::uniform_int_distribution<int> size(5, 50), dims(2, 4), levels(1, 2);
  std::normal_distribution<double> g(0, 1);
  std::size_t compared = 0, mismatched = 0, nonempty = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const int p = dims(rng), lv = levels(rng), nt = size(rng), nc = size(rng);
    std::uniform_int_distribution<int> ex(0, lv - 1);
    std::vector<double> scale(static_cast<std::size_t>(p)), shift(static_cast<std::size_t>(p));
    for (int j = 0; j < p; ++j) {
      scale[static_cast<std::size_t>(j)] = std::exp(1.5 * g(rng));
      shift[static_cast<std::size_t>(j)] = 0.3 * g(rng);
    }
    std::vector<Sample> treated, controls;
    std::vector<oracle::Unit> ut, uc;
    std::size_t id = 0;
    for (int i = 0; i < nt + nc; ++i) {
      const bool is_t = i < nt;
      const double common = g(rng);
      Sample s;
      s.id = id++;
      for (int j = 0; j < p; ++j) {
        const auto jj = static_cast<std::size_t>(j);
        s.continuous.push_back(scale[jj] * (g(rng) + 0.5 * common + (is_t ? shift[jj] : 0.0)));
      }
      s.exact = {ex(rng)};
      (is_t ? ut : uc).push_back({s.id, s.continuous, s.exact});
      (is_t ? treated : controls).push_back(std::move(s));
    }
    for (bool repl : {true, false})
      for (double cal : {0.1, 0.2}) {
        MatchConfig cfg;
        cfg.with_replacement = repl;
        cfg.caliper_sd = cal;
        cfg.seed = static_cast<std::uint64_t>(inst) * 31 + 5;
        const auto got = match_samples(treated, controls, cfg);
        std::vector<oracle::Pair> pairs;
        for (const auto& pr : got.pairs) pairs.push_back({pr.treated_id, pr.control_id});
        const auto want = oracle::brute_force_match(ut, uc, cal, repl, cfg.seed);
        ++compared;
        nonempty += !want.empty();
        if (pairs != want) ++mismatched;
      }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {mismatched == 0 && secs < 30,
          fmt("%zu/%zu pair sets identical (%zu non-empty), %.2f s", compared - mismatched, compared, nonempty, secs)};
}

// Moderate skew with test-to-test variability closer to field data than the generator defaults.
SynthSpec recovery_spec(std::uint64_t seed, double tau) {
  auto spec = pair_spec(seed, 5000, tau, Side{110000, 27, 0.10, 0.05, 9, 23}, Side{130000, 24, 0.05, 0.05, 9, 24});
  spec.noise_sd = 2.0;
  spec.relative_noise_sd = 0.2;
  spec.tests = {TestCountModel::Kind::Fixed, 4, 4, 1.0};
  return spec;
}

Verdict debiasing_recovery() {
  int covered = 0, far = 0, covered_r = 0;
  const int runs = 50;
  double worst_gap = 1e9, bias = 0;
  for (int run = 0; run < runs; ++run) {
    const double tau = std::array{-2.0, 0.0, 2.0}[run % 3];
    const auto data = generate(recovery_spec(1000 + static_cast<std::uint64_t>(run), tau));
    const auto nr = household_match(data, 77 + static_cast<std::uint64_t>(run), false, 0.2, 1000);
    const auto r = household_match(data, 77 + static_cast<std::uint64_t>(run), true, 0.2, 1000);
    const double gap = std::fabs(nr.naive_diff_mbps - tau);
    worst_gap = std::min(worst_gap, gap);
    far += gap > 1.0;
    bias += nr.ate_mbps.value_or(NAN) - tau;
    if (nr.ci95 && nr.ci95->first <= tau && tau <= nr.ci95->second) ++covered;
    if (r.ci95 && r.ci95->first <= tau && tau <= r.ci95->second) ++covered_r;
  }
  const bool pass = far == runs && covered >= 45;
  return {pass, fmt("nr CI covers tau in %d/%d runs (r: %d/%d); mean ATE - tau %+.3f; |naive - tau| > 1 in %d/%d (min %.2f)",
                    covered, runs, covered_r, runs, bias / runs, far, runs, worst_gap)};
}

Verdict shrinkage() {
  double sum_naive = 0, sum_ate = 0;
  int configs = 0;
  for (int k = 0; k < 20; ++k) {
    // vary the direction and strength of the covariate skew
    const double s = 0.4 + 0.06 * k;
    Side a = kRichSide, b = kPoorSide;
    a.rwnd = 100000 * (1 + s);
    b.rwnd = 100000 * (1 - 0.5 * s);
    const bool flip = k % 2 == 1;
    const auto data =
        generate(pair_spec(500 + static_cast<std::uint64_t>(k), 1500, 0.0, flip ? a : b, flip ? b : a));
    const auto o = household_match(data, static_cast<std::uint64_t>(k), true, 0.2, 0);
    if (!o.ate_mbps) continue;
    ++configs;
    sum_naive += std::fabs(o.naive_diff_mbps);
    sum_ate += std::fabs(*o.ate_mbps);
  }
  const double mean_naive = sum_naive / configs, mean_ate = sum_ate / configs;

  // sign flip: a slower ISP whose customers have better lines
  const auto data = generate(pair_spec(4242, 5000, -1.5, kRichSide, kPoorSide));
  const auto o = household_match(data, 9, true, 0.2, 1000);
  const bool flipped = o.naive_diff_mbps > 0 && o.ci95 && o.ci95->second < 0;
  const bool pass = configs == 20 && mean_ate < mean_naive && flipped;
  return {pass, fmt("mean |ATE| %.3f < mean |naive| %.3f over %d configs; sign flip naive %+.2f, ATE %+.2f, CI [%.2f, %.2f]",
                    mean_ate, mean_naive, configs, o.naive_diff_mbps, o.ate_mbps.value_or(NAN),
                    o.ci95 ? o.ci95->first : NAN, o.ci95 ? o.ci95->second : NAN)};
}

Verdict discard_pattern() {
  int r_below_nr = 0, r_mono = 0, nr_mono = 0;
  std::string example;
  for (int seed = 0; seed < 10; ++seed) {
    // controls are scarce in the bin, so matching without replacement runs out of them
    auto spec = pair_spec(700 + static_cast<std::uint64_t>(seed), 600, 0.0, kPoorSide, kRichSide);
    spec.isps[0].households = 2400;
    const auto data = generate(spec);
    TierConfig tc;
    tc.bins = TierBins(std::vector<double>{0, 12, 20, 1000});
    tc.min_tests = 8;
    const auto profiles = profile_households(data.records, tc);
    MatchConfig base;
    base.treatment_isp = "T";
    base.control_isp = "C";
    base.tier_bin = "12-20";
    base.seed = static_cast<std::uint64_t>(seed);
    const auto s = build_samples(data.records, profiles, base);
    auto dr = [&](bool repl, double cal) {
      MatchConfig c = base;
      c.with_replacement = repl;
      c.caliper_sd = cal;
      return match_samples(s.treated, s.controls, c).discard_rate;
    };
    const double r2 = dr(true, 0.2), n2 = dr(false, 0.2), r1 = dr(true, 0.1), n1 = dr(false, 0.1);
    r_below_nr += r2 < n2;
    r_mono += r1 >= r2;
    nr_mono += n1 >= n2;
    if (std::getenv("DEBIAS_VERBOSE") || seed == 0)
      example += fmt("; seed %d: r %.3f/%.3f, nr %.3f/%.3f at 0.1/0.2 (%zu treated, %zu control tests)", seed, r1, r2, n1, n2,
                     s.treated.size(), s.controls.size());
  }
  return {r_below_nr == 10 && r_mono == 10 && nr_mono == 10,
          fmt("r<nr %d/10, r monotone %d/10, nr monotone %d/10%s", r_below_nr, r_mono, nr_mono, example.c_str())};
}

Verdict rho_mechanism() {
  TierConfig cfg;
  cfg.refined = false;
  SynthSpec single;
  single.seed = 55;
  single.months = 4;
  single.tests = {TestCountModel::Kind::Fixed, 160, 160, 1.0};
  IspSynth isp;
  isp.name = "A";
  isp.households = 300;
  single.isps = {isp};
  const auto d1 = generate(single);
  const auto p1 = profile_households(d1.records, cfg);
  std::size_t neg = 0, defined = 0;
  for (const auto& p : p1)
    if (p.rho) {
      ++defined;
      neg += *p.rho < 0;
    }
  const double frac_neg = static_cast<double>(neg) / static_cast<double>(std::max<std::size_t>(defined, 1));

  // monthly sign stability per IP
  std::map<std::string, std::vector<TestRecord>> by_ip;
  for (const auto& r : d1.records) by_ip[r.client_ip].push_back(r);
  std::size_t stable = 0, ips = 0;
  for (const auto& [ip, tests] : by_ip) {
    const auto months = monthly_rho(tests);
    if (months.size() != 4) continue;
    ++ips;
    bool all_neg = true;
    for (const auto& [ym, rho] : months) all_neg = all_neg && rho && *rho < 0;
    stable += all_neg;
  }
  const double frac_stable = static_cast<double>(stable) / static_cast<double>(std::max<std::size_t>(ips, 1));

  SynthSpec nat = single;
  nat.tests = {TestCountModel::Kind::Fixed, 40, 40, 1.0};
  nat.isps[0].nat_sizes = {{4.0, 1.0}};
  nat.isps[0].nat_tier_ratio = 3.0;
  nat.isps[0].tiers = {{8, 25, 1.0, 1.0}};
  const auto p4 = profile_households(generate(nat).records, cfg);
  double sum = 0;
  int n = 0;
  for (const auto& p : p4)
    if (p.rho) {
      sum += *p.rho;
      ++n;
    }
  const double mean4 = n ? sum / n : NAN;
  return {frac_neg >= 0.95 && mean4 > 0 && frac_stable >= 0.95,
          fmt("single: %.1f%% of %zu IPs rho<0; 4-month sign stable in %.1f%% of %zu; NAT-4 ratio 3 mean rho %+.3f", 100 * frac_neg,
              defined, 100 * frac_stable, ips, mean4)};
}

Verdict pearson_tau() {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0, 1);
  std::uniform_int_distribution<int> len(2, 400);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const int n = len(rng);
    const double a = g(rng), scale = std::exp(3 * g(rng)), offset = 1e3 * g(rng);
    std::vector<double> x(static_cast<std::size_t>(n)), y(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
      x[k] = offset + scale * g(rng);
      y[k] = a * x[k] + scale * g(rng);
    }
    const auto got = pearson_rho(x, y);
    const auto want = oracle::pearson(x, y);
    if (got.has_value() != want.has_value()) return {false, fmt("definedness differs on vector %d", i)};
    if (got) worst = std::max(worst, std::fabs(*got - *want));
  }
  const std::vector<std::pair<std::vector<double>, std::vector<double>>> fixtures = {
      {{10, 12, 11, 60}, {60}},
      {{10, 10, 10}, {}},
      {{22.1, 25.4, 27.9, 18.6, 29.3, 24.0, 26.7, 21.5, 28.8, 23.2, 19.9, 27.1, 25.0, 29.7, 24.6, 26.2, 22.8, 28.1,
        20.4, 25.9, 61.2, 58.7, 60.3},
       {61.2, 60.3, 58.7, 18.6}},
      {{20, 21, 22, 23, 24, 25, 30}, {30}},
      {{5.0, 5.1, 4.9, 5.2, 4.8, 5.0, 7.5, 9.9}, {9.9, 7.5}},
  };
  int ok = 0;
  for (const auto& [in, expected] : fixtures)
    ok += reject_outliers_tau(in).rejected == expected && oracle::tau_rejections(in) == expected;
  return {worst <= 1e-12 && ok == 5, fmt("max |pearson - oracle| %.2e over 1000 vectors; tau fixtures %d/5", worst, ok)};
}

Verdict importance_order() {
  int good = 0;
  std::string ranks;
  for (int seed = 0; seed < 20; ++seed) {
    SynthSpec spec;
    spec.seed = 900 + static_cast<std::uint64_t>(seed);
    spec.months = 2;
    spec.tests = {TestCountModel::Kind::Fixed, 20, 20, 1.0};
    const double effects[] = {0.3, 0.0, -0.3};
    for (int k = 0; k < 3; ++k) {
      IspSynth i;
      i.name = std::string(1, static_cast<char>('A' + k));
      i.households = 150;
      i.effect_mbps = effects[k];
      i.tiers = {{2, 100, 1.0, 1.0}};
      i.rwnd_median_bytes = 150000;
      i.rwnd_log_sd = 0.8;
      i.rtt_median_ms = 25;
      i.rtt_log_sd = 0.3;
      i.rtt_jitter_log_sd = 0.05;
      spec.isps.push_back(i);
    }
    const auto data = generate(spec);
    const auto profiles = profile_households(data.records, TierConfig{});
    const auto m = build_feature_matrix(data.records, profiles);
    ForestParams fp;
    fp.trees = 60;
    fp.max_depth = 10;
    fp.seed = static_cast<std::uint64_t>(seed);
    fp.threads = 1;
    const auto forest = RandomForest::fit(m, fp);
    const auto rep = permutation_importance(forest, m, 1, static_cast<std::uint64_t>(seed) + 1);
    const auto tier_rank = rep["tier_mbps"].rank, isp_rank = rep["isp"].rank;
    good += tier_rank == 1 && isp_rank >= 4;
    if (seed < 3) ranks += fmt("%sseed %d: tier %zu rwnd %zu rtt %zu isp %zu", seed ? ";" : "", seed, tier_rank,
                               rep["rwnd_bytes"].rank, rep["min_rtt_ms"].rank, isp_rank);
  }
  return {good >= 18, fmt("tier first and isp at rank >= 4 in %d/20 seeds (%s)", good, ranks.c_str())};
}

TestRecord table_record(const std::string& ip, std::int64_t ts, double mbps) {
  TestRecord r;
  r.client_ip = ip;
  r.timestamp_utc = ts;
  r.utc_offset_minutes = 600;
  r.local_hour = local_hour_of(ts, 600);
  r.isp = "Telstra";
  r.country = "AU";
  r.download_mbps = mbps;
  r.min_rtt_ms = 20;
  r.mss_bytes = 1460;
  r.rwnd_bytes = 65535;
  r.congestion_count = static_cast<std::int64_t>(mbps) % 5;
  return r;
}

Verdict pipeline_accounting() {
  // 559 IPs with 20 tests, 5570 with 19 and one with 9: 117,019 tests, 11,180 at the 20-test threshold
  std::vector<TestRecord> records;
  const std::int64_t t0 = epoch_from_civil(2015, 1, 1);
  std::size_t next = 0;
  auto add = [&](std::size_t ips, int tests) {
    for (std::size_t i = 0; i < ips; ++i, ++next) {
      const std::string ip = "10.1." + std::to_string(next / 256) + "." + std::to_string(next % 256);
      for (int k = 0; k < tests; ++k)
        records.push_back(table_record(ip, t0 + k * 9 * 86400 + static_cast<std::int64_t>(i % 97) * 3607, 4 + (k * 7 % 11)));
    }
  };
  add(559, 20);
  add(5570, 19);
  add(1, 9);
  const auto dir = scratch("table");
  write_records_file((dir / "records_in.csv").string(), records);
  const auto cfg = pipeline_config_from_json(
      nlohmann::json::parse(R"({"input": {"records": "records_in.csv"}, "importance": {"enabled": false}})"), dir);
  checked_run(cfg, dir / "out");
  std::ifstream in(dir / "out" / "manifest.json");
  const auto m = nlohmann::json::parse(in);
  const double frac = m.at("counts").at("retained_fraction").get<double>();
  const auto raw = m.at("counts").at("raw").get<std::size_t>();
  const auto kept = m.at("counts").at("thresholded").get<std::size_t>();
  std::size_t row_kept = 0;
  for (const auto& row : m.at("accounting"))
    if (row.at("isp") == "Telstra" && row.at("year") == 2015) row_kept = row.at("thresholded").get<std::size_t>();
  return {std::fabs(frac - 0.096) <= 0.001 && raw == 117019 && kept == 11180 && row_kept == 11180,
          fmt("retained %zu/%zu = %.3f%%", kept, raw, 100 * frac)};
}

nlohmann::json determinism_config() {
  return nlohmann::json::parse(R"({
    "input": {"synth": {
      "seed": 31, "start": "2016-01", "months": 6,
      "tests": {"kind": "pareto", "min": 8, "max": 200, "alpha": 1.3},
      "outliers": {"rate": 0.005, "multiplier": 2.5},
      "isps": [
        {"name": "Telstra", "households": 400, "effect_mbps": -1.0, "tiers": [{"low": 8, "high": 25, "weight": 0.6}, {"low": 25, "high": 100, "weight": 0.4}],
         "rwnd": {"median": 90000, "log_sd": 0.6},
         "nat": {"sizes": [{"size": 1, "weight": 0.85}, {"size": 3, "weight": 0.15}], "tier_ratio": 3.0}},
        {"name": "Optus", "households": 400, "tiers": [{"low": 8, "high": 25, "weight": 0.6}, {"low": 25, "high": 100, "weight": 0.4}]},
        {"name": "TPG", "households": 300, "effect_mbps": 0.5, "tiers": [{"low": 8, "high": 50}]}
      ]}},
    "importance": {"trees": 80, "repeats": 2, "seed": 3, "threads": 2},
    "matching": {"defaults": {"bootstrap_resamples": 300},
                 "pairs": [{"treat": "Telstra", "control": "Optus", "bin": "12-20"},
                           {"treat": "TPG", "control": "Optus", "bin": "20-25"},
                           {"treat": "Telstra", "control": "TPG"}]},
    "series": {"scatter": [{"isp": "Telstra", "year_month": "2016-03"}]}
  })");
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      std::ifstream in(e.path(), std::ios::binary);
      std::ostringstream os;
      os << in.rdbuf();
      out[fs::relative(e.path(), root).string()] = os.str();
    }
  return out;
}

Verdict determinism(double elapsed_before) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto a = scratch("det_a"), b = scratch("det_b");
  checked_run(pipeline_config_from_json(determinism_config()), a);
  checked_run(pipeline_config_from_json(determinism_config()), b);
  const auto sa = snapshot(a), sb = snapshot(b);
  std::size_t differing = 0;
  for (const auto& [k, v] : sa)
    if (!sb.contains(k) || sb.at(k) != v) ++differing;
  differing += sb.size() > sa.size() ? sb.size() - sa.size() : 0;
  const double total = elapsed_before + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {differing == 0 && sa.size() > 10 && total < 600,
          fmt("%zu files, %zu differ; suite runtime %.1f s", sa.size(), differing, total)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"matching oracle equivalence", matching_oracle},
      {"debiasing recovery", debiasing_recovery},
      {"shrinkage and sign flip", shrinkage},
      {"replacement and caliper discard pattern", discard_pattern},
      {"rho mechanism", rho_mechanism},
      {"pearson and tau oracles", pearson_tau},
      {"importance ordering", importance_order},
      {"pipeline accounting",
       [] {
         auto v = pipeline_accounting();
         return v;
       }},
      {"determinism and runtime", [&] { return determinism(elapsed()); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && !only.contains(number)) continue;
    const double t = elapsed();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (number == 8 && !g_count_violations.empty()) {
      v.pass = false;
      v.detail += "; non-monotone counts in " + g_count_violations.front();
    }
    failures += !v.pass;
    std::printf("%s %d %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", number, criteria[i].first.c_str(), v.detail.c_str(),
                elapsed() - t);
    std::fflush(stdout);
  }
  if (g_count_violations.size() > 0) std::printf("non-monotone stage counts in %zu of %zu pipeline runs\n",
                                                 g_count_violations.size(), g_pipeline_runs);
  return failures == 0 && g_count_violations.empty() ? 0 : 1;
}

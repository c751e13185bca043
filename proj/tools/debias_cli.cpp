#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "debias/household.hpp"
#include "debias/importance.hpp"
#include "debias/ingest.hpp"
#include "debias/matching.hpp"
#include "debias/pipeline.hpp"
#include "debias/report.hpp"
#include "debias/synth.hpp"
#include "debias/tiers.hpp"

using namespace debias;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  return out;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("not valid JSON: " + path);
  return j;
}

std::vector<HouseholdProfile> profiles_for(const std::vector<TestRecord>& records, const std::string& path) {
  if (path.empty()) return profile_households(records, TierConfig{});
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_profiles(in);
}

std::vector<std::string> isps_of(const std::vector<TestRecord>& records) {
  std::set<std::string> s;
  for (const auto& r : records) s.insert(r.isp);
  return {s.begin(), s.end()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Debiased ISP speed comparisons from speed-test records"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(debias::kVersion));

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Parse a raw export into normalized records");
  std::string in_path, prefix_path, tz_path, os_rules_path, out_path, rejects_path;
  ingest->add_option("--input", in_path)->required();
  ingest->add_option("--prefix-map", prefix_path)->required();
  ingest->add_option("--tz", tz_path)->required();
  ingest->add_option("--os-rules", os_rules_path, "CSV pattern,os_class overriding the built-in table");
  ingest->add_option("--out", out_path)->required();
  ingest->add_option("--rejects", rejects_path);

  // baseline
  auto* baseline = app.add_subcommand("baseline", "Monthly median of household means per ISP");
  std::string group_by = "isp", country, stat = "mean";
  baseline->add_option("--in", in_path)->required();
  baseline->add_option("--group-by", group_by)->check(CLI::IsMember({"isp"}));
  baseline->add_option("--country", country);
  baseline->add_option("--stat", stat)->check(CLI::IsMember({"mean", "median"}));
  baseline->add_option("--out", out_path)->required();

  // ccdf
  auto* ccdf = app.add_subcommand("ccdf", "CCDF of per-household test counts");
  std::optional<int> year;
  ccdf->add_option("--in", in_path)->required();
  ccdf->add_option("--year", year);
  ccdf->add_option("--out", out_path)->required();

  // profile
  auto* profile = app.add_subcommand("profile", "Household profiles: rho, eligibility, speed tier");
  std::optional<std::int64_t> min_tests;
  std::string bins = "default";
  double alpha = 0.05;
  bool unrefined = false;
  profile->add_option("--in", in_path)->required();
  profile->add_option("--country", country, "Keep only records from this country");
  profile->add_option("--min-tests", min_tests, "Override the per-country threshold");
  profile->add_option("--bins", bins);
  profile->add_option("--alpha", alpha);
  profile->add_flag("--unrefined", unrefined, "Skip the rho gate and outlier rejection");
  profile->add_option("--out", out_path)->required();

  // rho-dist
  auto* rho_dist = app.add_subcommand("rho-dist", "Histogram of per-IP rho for one ISP");
  std::string isp;
  double width = 0.1;
  rho_dist->add_option("--in", in_path, "profiles.csv")->required();
  rho_dist->add_option("--isp", isp)->required();
  rho_dist->add_option("--width", width);
  rho_dist->add_option("--out", out_path)->required();

  // rho-monthly
  auto* rho_monthly = app.add_subcommand("rho-monthly", "Per-month rho for one IP");
  std::string ip;
  rho_monthly->add_option("--in", in_path)->required();
  rho_monthly->add_option("--ip", ip)->required();
  rho_monthly->add_option("--out", out_path, "defaults to stdout");

  // importance
  auto* importance = app.add_subcommand("importance", "Random-forest permutation importance");
  std::string profiles_path;
  ForestParams fp;
  std::size_t repeats = 3;
  importance->add_option("--in", in_path)->required();
  importance->add_option("--profiles", profiles_path, "profiles.csv; computed with defaults when absent");
  importance->add_option("--country", country);
  importance->add_option("--trees", fp.trees);
  importance->add_option("--max-depth", fp.max_depth);
  importance->add_option("--min-leaf", fp.min_leaf);
  importance->add_option("--mtry", fp.features_per_split);
  importance->add_option("--seed", fp.seed);
  importance->add_option("--threads", fp.threads);
  importance->add_option("--repeats", repeats);
  importance->add_option("--out", out_path)->required();

  // match
  auto* match = app.add_subcommand("match", "Mahalanobis matching for one ISP pair");
  MatchConfig mc;
  std::string replacement = "r";
  match->add_option("--in", in_path)->required();
  match->add_option("--profiles", profiles_path);
  match->add_option("--treat", mc.treatment_isp)->required();
  match->add_option("--control", mc.control_isp)->required();
  match->add_option("--bin", mc.tier_bin);
  match->add_option("--year", mc.year);
  match->add_option("--caliper", mc.caliper_sd);
  match->add_option("--replacement", replacement)->check(CLI::IsMember({"r", "nr"}));
  match->add_option("--seed", mc.seed);
  match->add_option("--resamples", mc.bootstrap_resamples);
  match->add_flag("--household", mc.household_level, "Match household means instead of tests");
  match->add_option("--out", out_path)->required();

  // rank
  auto* rank = app.add_subcommand("rank", "Rank a suite of ISP pairs by naive difference");
  std::string suite_path, series_path;
  rank->add_option("--suite", suite_path)->required();
  rank->add_option("--in", in_path, "records; overrides the suite's records entry");
  rank->add_option("--profiles", profiles_path);
  rank->add_option("--out", out_path)->required();
  rank->add_option("--series", series_path, "pair_forest series output");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic records with ground truth");
  std::string spec_path, truth_path, raw_dir;
  synth->add_option("--spec", spec_path)->required();
  synth->add_option("--out", out_path)->required();
  synth->add_option("--truth", truth_path);
  synth->add_option("--raw-dir", raw_dir, "also write raw.csv, prefixes.csv and tz.csv here");

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage and write an artifact directory");
  std::string config_path, out_dir;
  pipeline->add_option("--config", config_path)->required();
  pipeline->add_option("--out-dir", out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*ingest) {
      const auto prefixes = IspPrefixMap::load(prefix_path);
      const auto tz = TimezoneTable::load(tz_path);
      const auto rules = os_rules_path.empty() ? OsRules::defaults() : OsRules::load(os_rules_path);
      const auto res = parse_records(in_path, IngestContext{prefixes, tz, rules});
      write_records_file(out_path, res.records);
      if (!rejects_path.empty()) {
        auto rej = open_out(rejects_path);
        write_rejects(rej, res.rejects);
      }
      std::cerr << res.records.size() << " records, " << res.rejects.size() << " rejected\n";
    } else if (*baseline) {
      const auto records = read_records_file(in_path);
      const auto agg = aggregate_monthly(records, stat == "median" ? MonthlyStat::Median : MonthlyStat::Mean);
      emit_file(monthly_median_plot(agg, isps_of(records), country), out_path);
    } else if (*ccdf) {
      const auto agg = aggregate_monthly(read_records_file(in_path));
      emit_file(ccdf_plot(agg, year), out_path);
    } else if (*profile) {
      auto records = read_records_file(in_path);
      if (!country.empty())
        std::erase_if(records, [&](const TestRecord& r) { return r.country != country; });
      TierConfig tc;
      tc.min_tests = min_tests;
      tc.bins = TierBins::parse(bins);
      tc.alpha = alpha;
      tc.refined = !unrefined;
      auto out = open_out(out_path);
      write_profiles(out, profile_households(records, tc));
    } else if (*rho_dist) {
      std::ifstream in(in_path);
      if (!in) throw Error("cannot open " + in_path);
      emit_file(rho_hist_plot(read_profiles(in), isp, width), out_path);
    } else if (*rho_monthly) {
      const auto records = read_records_file(in_path);
      std::vector<TestRecord> tests;
      for (const auto& r : records)
        if (r.client_ip == ip) tests.push_back(r);
      if (tests.empty()) throw Error("no tests for IP " + ip);
      std::ofstream file;
      if (!out_path.empty()) file = open_out(out_path);
      std::ostream& out = out_path.empty() ? std::cout : file;
      out << "year_month,rho,tests\n";
      std::map<YearMonth, std::size_t> counts;
      for (const auto& r : tests) counts[r.year_month()]++;
      for (const auto& [ym, rho] : monthly_rho(tests))
        out << ym.str() << ',' << (rho ? format_double(*rho) : "") << ',' << counts[ym] << '\n';
    } else if (*importance) {
      auto records = read_records_file(in_path);
      const auto profiles = profiles_for(records, profiles_path);
      if (!country.empty())
        std::erase_if(records, [&](const TestRecord& r) { return r.country != country; });
      const auto m = build_feature_matrix(records, profiles);
      const auto forest = RandomForest::fit(m, fp);
      for (const auto& w : forest.warnings()) std::cerr << "warning: " << w << '\n';
      auto out = open_out(out_path);
      write_importance_csv(out, permutation_importance(forest, m, repeats, fp.seed));
    } else if (*match) {
      mc.with_replacement = replacement == "r";
      mc.validate();
      const auto records = read_records_file(in_path);
      const auto profiles = profiles_for(records, profiles_path);
      const auto samples = build_samples(records, profiles, mc);
      const auto oc = run_matching(samples.treated, samples.controls, mc, samples.names);
      for (const auto& w : oc.warnings) std::cerr << "warning: " << w << '\n';
      auto out = open_out(out_path);
      out << to_json(oc, mc).dump(2) << '\n';
    } else if (*rank) {
      const auto suite = read_json(suite_path);
      const auto base = std::filesystem::path(suite_path).parent_path();
      std::string records_path = in_path;
      if (records_path.empty()) {
        if (!suite.contains("records")) throw ConfigError("suite has no records entry and --in is absent");
        std::filesystem::path p(suite.at("records").get<std::string>());
        records_path = (p.is_absolute() ? p : base / p).string();
      }
      MatchConfig defaults;
      if (suite.contains("defaults")) defaults = match_config_from_json(suite.at("defaults"));
      std::vector<MatchConfig> configs;
      for (const auto& p : suite.at("pairs")) {
        auto c = match_config_from_json(p, defaults);
        c.validate();
        if (c.treatment_isp.empty() || c.control_isp.empty())
          throw ConfigError("every pair needs treat and control ISPs");
        configs.push_back(std::move(c));
      }
      const auto records = read_records_file(records_path);
      const auto profiles = profiles_for(records, profiles_path);
      const auto rows = rank_pairs(configs, records, profiles);
      auto out = open_out(out_path);
      write_rank_table(out, rows);
      if (!series_path.empty()) emit_file(pair_forest_plot(rows), series_path);
    } else if (*synth) {
      const auto spec = load_synth_spec(spec_path);
      const auto data = generate(spec);
      write_records_file(out_path, data.records);
      if (!truth_path.empty()) {
        auto out = open_out(truth_path);
        out << to_json(data.truth).dump(2) << '\n';
      }
      if (!raw_dir.empty()) {
        std::filesystem::create_directories(raw_dir);
        auto raw = open_out(raw_dir + "/raw.csv");
        auto pm = open_out(raw_dir + "/prefixes.csv");
        auto tz = open_out(raw_dir + "/tz.csv");
        write_raw_export(spec, data.records, raw, pm, tz);
      }
    } else if (*pipeline) {
      const auto cfg = load_pipeline_config(config_path);
      const auto res = run_pipeline(cfg, out_dir);
      std::cerr << "raw " << res.counts.raw << ", thresholded " << res.counts.thresholded << ", single-household "
                << res.counts.single_household << ", matched " << res.counts.matched << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const StageError& e) {
    std::cerr << "stage '" << e.stage << "' failed: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

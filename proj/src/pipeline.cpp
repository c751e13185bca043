#include "debias/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include "debias/ingest.hpp"
#include "debias/report.hpp"

namespace debias {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const nlohmann::json& v, const fs::path& base) {
  fs::path p(v.get<std::string>());
  return p.is_absolute() || base.empty() ? p : base / p;
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key) && !j.at(key).is_null()) field = j.at(key).get<T>();
}

std::string safe_name(std::string_view s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {}

  std::ofstream open(const std::string& rel) {
    const auto path = root_ / rel;
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    written_.insert(rel);
    return out;
  }
  void series(const PlotSeries& s, const std::string& rel) {
    auto out = open(rel);
    emit(s, EmitFormat::Csv, out);
  }
  const std::set<std::string>& written() const { return written_; }

 private:
  fs::path root_;
  std::set<std::string> written_;
};

template <typename F>
auto stage(const char* name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  PipelineConfig cfg;
  try {
    reject_unknown(j, {"input", "monthly_stat", "tiers", "importance", "matching", "series"}, "pipeline config");
    cfg.source = nlohmann::ordered_json::parse(j.dump());

    const auto& in = j.at("input");
    reject_unknown(in, {"records", "raw", "prefix_map", "tz", "os_rules", "synth", "synth_spec"}, "input");
    const int sources = static_cast<int>(in.contains("records")) + static_cast<int>(in.contains("raw")) +
                        static_cast<int>(in.contains("synth")) + static_cast<int>(in.contains("synth_spec"));
    if (sources != 1) throw ConfigError("input needs exactly one of records, raw, synth, synth_spec");
    if (in.contains("records")) cfg.records = resolve(in.at("records"), base_dir);
    if (in.contains("raw")) {
      cfg.raw = resolve(in.at("raw"), base_dir);
      if (!in.contains("prefix_map") || !in.contains("tz")) throw ConfigError("raw input needs prefix_map and tz");
      cfg.prefix_map = resolve(in.at("prefix_map"), base_dir);
      cfg.tz = resolve(in.at("tz"), base_dir);
      if (in.contains("os_rules")) cfg.os_rules = resolve(in.at("os_rules"), base_dir);
    }
    if (in.contains("synth")) cfg.synth = synth_spec_from_json(in.at("synth"));
    if (in.contains("synth_spec")) cfg.synth = load_synth_spec(resolve(in.at("synth_spec"), base_dir).string());

    if (j.contains("monthly_stat")) {
      const auto s = j.at("monthly_stat").get<std::string>();
      if (s == "mean") cfg.monthly_stat = MonthlyStat::Mean;
      else if (s == "median") cfg.monthly_stat = MonthlyStat::Median;
      else throw ConfigError("monthly_stat must be mean or median");
    }

    if (j.contains("tiers")) {
      const auto& t = j.at("tiers");
      reject_unknown(t, {"min_tests", "min_tests_by_country", "default_min_tests", "bins", "alpha", "refined"}, "tiers");
      if (t.contains("min_tests") && !t.at("min_tests").is_null()) cfg.tiers.min_tests = t.at("min_tests").get<std::int64_t>();
      if (t.contains("min_tests_by_country"))
        for (const auto& [k, v] : t.at("min_tests_by_country").items()) cfg.tiers.min_tests_by_country[k] = v.get<std::int64_t>();
      maybe(t, "default_min_tests", cfg.tiers.default_min_tests);
      if (t.contains("bins")) {
        const auto& b = t.at("bins");
        if (b.is_string()) {
          cfg.tiers.bins = TierBins::parse(b.get<std::string>());
        } else {
          cfg.tiers.bins = TierBins(b.get<std::vector<double>>());
        }
      }
      maybe(t, "alpha", cfg.tiers.alpha);
      maybe(t, "refined", cfg.tiers.refined);
      if (!(cfg.tiers.alpha > 0 && cfg.tiers.alpha < 1)) throw ConfigError("tiers.alpha must lie in (0, 1)");
    }

    if (j.contains("importance")) {
      const auto& im = j.at("importance");
      reject_unknown(im, {"enabled", "country", "trees", "max_depth", "min_leaf", "features_per_split", "seed",
                          "repeats", "threads"},
                     "importance");
      maybe(im, "enabled", cfg.importance);
      maybe(im, "country", cfg.importance_country);
      maybe(im, "trees", cfg.forest.trees);
      maybe(im, "max_depth", cfg.forest.max_depth);
      maybe(im, "min_leaf", cfg.forest.min_leaf);
      maybe(im, "features_per_split", cfg.forest.features_per_split);
      maybe(im, "seed", cfg.forest.seed);
      maybe(im, "repeats", cfg.importance_repeats);
      maybe(im, "threads", cfg.forest.threads);
      if (cfg.forest.trees == 0 || cfg.importance_repeats == 0) throw ConfigError("importance needs trees and repeats");
    }

    if (j.contains("matching")) {
      const auto& m = j.at("matching");
      reject_unknown(m, {"defaults", "pairs"}, "matching");
      if (m.contains("defaults")) cfg.match_defaults = match_config_from_json(m.at("defaults"));
      if (m.contains("pairs"))
        for (const auto& p : m.at("pairs")) {
          auto pc = match_config_from_json(p, cfg.match_defaults);
          pc.validate();
          if (pc.treatment_isp.empty() || pc.control_isp.empty())
            throw ConfigError("every pair needs treat and control ISPs");
          cfg.pairs.push_back(std::move(pc));
        }
    }

    if (j.contains("series")) {
      const auto& s = j.at("series");
      reject_unknown(s, {"density_attributes", "scatter", "rho_bin_width"}, "series");
      maybe(s, "density_attributes", cfg.density_attributes);
      maybe(s, "rho_bin_width", cfg.rho_bin_width);
      if (s.contains("scatter"))
        for (const auto& e : s.at("scatter"))
          cfg.scatter.push_back({e.at("isp").get<std::string>(), YearMonth::parse(e.at("year_month").get<std::string>())});
      if (!(cfg.rho_bin_width > 0 && cfg.rho_bin_width <= 2)) throw ConfigError("rho_bin_width must lie in (0, 2]");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path.string());
  return pipeline_config_from_json(j, path.parent_path());
}

std::vector<AccountingRow> test_accounting(std::span<const TestRecord> records,
                                           std::span<const HouseholdProfile> profiles, const TierConfig& cfg) {
  std::set<std::string_view> eligible;
  for (const auto& p : profiles)
    if (p.eligible) eligible.insert(p.client_ip);

  std::map<std::pair<std::string_view, int>, std::int64_t> per_ip_year;
  for (const auto& r : records) per_ip_year[{r.client_ip, r.year_month().year}]++;

  std::map<std::pair<std::string, int>, AccountingRow> rows;
  for (const auto& r : records) {
    const int year = r.year_month().year;
    auto& row = rows[{r.isp, year}];
    row.isp = r.isp;
    row.year = year;
    row.raw++;
    if (per_ip_year[{r.client_ip, year}] >= cfg.threshold_for(r.country)) row.thresholded++;
    if (eligible.contains(r.client_ip)) row.used++;
  }
  std::vector<AccountingRow> out;
  for (auto& [_, row] : rows) out.push_back(std::move(row));
  return out;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const fs::path& out_dir) {
  PipelineResult result;
  std::vector<std::string> warnings;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw StageError("output", "cannot create " + out_dir.string() + ": " + ec.message());
  OutputDir out(out_dir);

  // ingest
  std::vector<TestRecord> records;
  stage("ingest", [&] {
    if (cfg.records) {
      records = read_records_file(cfg.records->string());
      result.counts.raw = result.counts.ingested = records.size();
    } else if (cfg.raw) {
      const auto prefixes = IspPrefixMap::load(cfg.prefix_map->string());
      const auto tz = TimezoneTable::load(cfg.tz->string());
      const auto rules = cfg.os_rules ? OsRules::load(cfg.os_rules->string()) : OsRules::defaults();
      auto parsed = parse_records(cfg.raw->string(), IngestContext{prefixes, tz, rules});
      records = std::move(parsed.records);
      result.counts.raw = parsed.rows;
      result.counts.ingested = records.size();
      auto rej = out.open("rejects.csv");
      write_rejects(rej, parsed.rejects);
    } else {
      auto data = generate(*cfg.synth);
      records = std::move(data.records);
      result.counts.raw = result.counts.ingested = records.size();
      auto truth = out.open("truth.json");
      truth << to_json(data.truth).dump(2) << '\n';
    }
    auto rec = out.open("records.csv");
    write_records(rec, records);
  });

  std::set<std::string> isp_set;
  for (const auto& r : records) isp_set.insert(r.isp);
  const std::vector<std::string> isps(isp_set.begin(), isp_set.end());

  // household
  stage("household", [&] {
    const auto agg = aggregate_monthly(records, cfg.monthly_stat);
    out.series(monthly_median_plot(agg, isps, ""), "series/monthly_median.csv");
    std::set<int> years;
    for (const auto& h : agg) years.insert(h.year_month.year);
    for (int y : years) out.series(ccdf_plot(agg, y), "series/ccdf_" + std::to_string(y) + ".csv");
  });

  // tiers
  stage("tiers", [&] {
    result.profiles = profile_households(records, cfg.tiers);
    auto prof = out.open("profiles.csv");
    write_profiles(prof, result.profiles);
    for (const auto& isp : isps)
      out.series(rho_hist_plot(result.profiles, isp, cfg.rho_bin_width), "series/rho_hist_" + safe_name(isp) + ".csv");
    result.accounting = test_accounting(records, result.profiles, cfg.tiers);

    std::map<std::string_view, const HouseholdProfile*> by_ip;
    for (const auto& p : result.profiles) by_ip[p.client_ip] = &p;
    for (const auto& r : records) {
      const auto* p = by_ip.at(r.client_ip);
      if (p->annual_test_count >= cfg.tiers.threshold_for(p->country)) result.counts.thresholded++;
      if (p->eligible) result.counts.single_household++;
    }
  });

  // importance
  stage("importance", [&] {
    if (!cfg.importance) return;
    std::vector<TestRecord> subset;
    for (const auto& r : records)
      if (cfg.importance_country.empty() || r.country == cfg.importance_country) subset.push_back(r);
    const auto m = build_feature_matrix(subset, result.profiles);
    if (m.rows() < 2) {
      warnings.push_back("importance skipped: fewer than two rows with a tier estimate");
      return;
    }
    const auto forest = RandomForest::fit(m, cfg.forest);
    for (const auto& w : forest.warnings()) warnings.push_back("importance: " + w);
    result.importance = permutation_importance(forest, m, cfg.importance_repeats, cfg.forest.seed);
    auto imp = out.open("importance.csv");
    write_importance_csv(imp, *result.importance);
  });

  // matching
  stage("matching", [&] {
    result.ranked = rank_pairs(cfg.pairs, records, result.profiles);
    auto ranked = out.open("ranked.csv");
    write_rank_table(ranked, result.ranked);

    std::map<std::string_view, std::vector<std::size_t>> tests_by_ip;
    for (std::size_t i = 0; i < records.size(); ++i) tests_by_ip[records[i].client_ip].push_back(i);
    std::set<std::size_t> matched_tests;
    for (const auto& row : result.ranked) {
      for (bool repl : {true, false}) {
        auto c = row.config;
        c.with_replacement = repl;
        const auto& oc = repl ? row.with_replacement : row.without_replacement;
        auto f = out.open("outcomes/pair_" + std::to_string(row.pair_id) + (repl ? "_r" : "_nr") + ".json");
        f << to_json(oc, c).dump(2) << '\n';
        for (const auto& p : oc.pairs) {
          for (std::size_t id : {p.treated_id, p.control_id}) {
            if (!c.household_level) {
              matched_tests.insert(id);
              continue;
            }
            for (std::size_t i : tests_by_ip[result.profiles.at(id).client_ip])
              if (!c.year || records[i].year_month().year == *c.year) matched_tests.insert(i);
          }
        }
      }
    }
    result.counts.matched = matched_tests.size();
  });

  // report
  stage("report", [&] {
    out.series(pair_forest_plot(result.ranked), "series/pair_forest.csv");
    for (const auto& a : cfg.density_attributes)
      out.series(density_plot(records, a, isps), "series/density_" + safe_name(a) + ".csv");
    for (const auto& s : cfg.scatter)
      out.series(scatter_facet_plot(records, s.isp, s.month),
                 "series/scatter_" + safe_name(s.isp) + "_" + s.month.str() + ".csv");

    using oj = nlohmann::ordered_json;
    oj m;
    m["tool"] = "debias";
    m["version"] = kVersion;
    m["config"] = cfg.source;
    oj seeds;
    seeds["synth"] = cfg.synth ? oj(cfg.synth->seed) : oj(nullptr);
    seeds["forest"] = cfg.forest.seed;
    auto match_seeds = oj::array();
    for (const auto& p : cfg.pairs) match_seeds.push_back(p.seed);
    seeds["matching"] = match_seeds;
    m["seeds"] = seeds;
    const auto& c = result.counts;
    m["counts"] = {{"raw", c.raw},
                   {"ingested", c.ingested},
                   {"rejected", c.raw - c.ingested},
                   {"thresholded", c.thresholded},
                   {"single_household", c.single_household},
                   {"matched", c.matched},
                   {"retained_fraction", c.retained_fraction()}};
    auto acc = oj::array();
    for (const auto& a : result.accounting)
      acc.push_back({{"isp", a.isp},
                     {"year", a.year},
                     {"raw", a.raw},
                     {"thresholded", a.thresholded},
                     {"used", a.used},
                     {"retained_pct", a.retained_pct()}});
    m["accounting"] = acc;
    m["households"] = {{"profiles", result.profiles.size()},
                       {"eligible", std::count_if(result.profiles.begin(), result.profiles.end(),
                                                  [](const HouseholdProfile& p) { return p.eligible; })}};
    if (result.importance) {
      oj imp;
      imp["rows"] = result.importance->rows;
      imp["trees"] = result.importance->trees;
      imp["baseline_oob_mse"] = result.importance->baseline_oob_mse;
      auto ranks = oj::array();
      for (const auto& f : result.importance->features) ranks.push_back({{"feature", f.name}, {"rank", f.rank}});
      imp["ranks"] = ranks;
      m["importance"] = imp;
    } else {
      m["importance"] = nullptr;
    }
    m["warnings"] = warnings;
    auto outputs = oj::array();
    for (const auto& w : out.written()) outputs.push_back(w);
    outputs.push_back("manifest.json");
    m["outputs"] = outputs;
    result.manifest = m;
    auto mf = out.open("manifest.json");
    mf << m.dump(2) << '\n';
  });

  return result;
}

}  // namespace debias

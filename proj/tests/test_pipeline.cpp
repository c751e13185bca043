#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "debias/pipeline.hpp"

using namespace debias;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("debias_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

nlohmann::json small_config() {
  return nlohmann::json::parse(R"({
    "input": {"synth": {
      "seed": 12, "start": "2016-01", "months": 6,
      "tests": {"kind": "uniform", "min": 10, "max": 45},
      "isps": [
        {"name": "A", "households": 120, "effect_mbps": -2.0, "tiers": [{"low": 8, "high": 25}],
         "nat": {"sizes": [{"size": 1, "weight": 0.8}, {"size": 3, "weight": 0.2}], "tier_ratio": 3.0}},
        {"name": "B", "households": 120, "tiers": [{"low": 8, "high": 25}]}
      ]}},
    "tiers": {"bins": [0, 12, 20, 25, 1000]},
    "importance": {"trees": 30, "repeats": 1, "seed": 4},
    "matching": {"defaults": {"caliper": 0.5, "bootstrap_resamples": 100},
                 "pairs": [{"treat": "A", "control": "B", "bin": "12-20"}, {"treat": "B", "control": "A"}]},
    "series": {"scatter": [{"isp": "A", "year_month": "2016-03"}]}
  })");
}

TestRecord rec(const std::string& ip, std::int64_t ts, double mbps) {
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
  r.congestion_count = static_cast<std::int64_t>(mbps) % 7;
  return r;
}

}  // namespace

TEST_CASE("stage counts shrink through the pipeline") {
  const auto dir = scratch("counts");
  const auto res = run_pipeline(pipeline_config_from_json(small_config()), dir);
  const auto& c = res.counts;
  CHECK(c.raw > 0);
  CHECK(c.ingested <= c.raw);
  CHECK(c.thresholded <= c.ingested);
  CHECK(c.single_household <= c.thresholded);
  CHECK(c.matched <= c.single_household);
  CHECK(c.matched > 0);
  CHECK(res.ranked.size() == 2);
  CHECK(res.importance.has_value());
  for (const char* f : {"records.csv", "profiles.csv", "importance.csv", "ranked.csv", "manifest.json",
                        "truth.json", "series/monthly_median.csv", "series/pair_forest.csv",
                        "series/scatter_A_2016-03.csv", "series/rho_hist_A.csv", "series/density_rwnd_bytes.csv",
                        "outcomes/pair_1_r.json", "outcomes/pair_2_nr.json"})
    CHECK_MESSAGE(fs::exists(dir / f), f);
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(m.at("counts").at("raw") == c.raw);
  CHECK(m.at("version") == std::string(kVersion));
  for (const auto& f : m.at("outputs")) CHECK(fs::exists(dir / f.get<std::string>()));
}

TEST_CASE("re-running with the same config writes identical files") {
  const auto a = scratch("det_a"), b = scratch("det_b");
  run_pipeline(pipeline_config_from_json(small_config()), a);
  run_pipeline(pipeline_config_from_json(small_config()), b);
  const auto ta = tree(a), tb = tree(b);
  CHECK(ta.size() > 10);
  CHECK(ta == tb);
}

TEST_CASE("retained share for a thresholded ISP-year") {
  // 559 IPs at 20 tests, 5570 IPs at 19 and one at 9, all in one year
  std::vector<TestRecord> records;
  const std::int64_t t0 = epoch_from_civil(2015, 1, 1);
  auto add = [&](std::size_t ips, int tests, std::size_t offset) {
    for (std::size_t i = 0; i < ips; ++i) {
      const std::string ip = "10." + std::to_string((offset + i) / 65536) + "." + std::to_string((offset + i) / 256 % 256) +
                             "." + std::to_string((offset + i) % 256);
      for (int k = 0; k < tests; ++k) records.push_back(rec(ip, t0 + k * 7 * 86400 + static_cast<std::int64_t>(i) * 61, 5 + k % 9));
    }
  };
  add(559, 20, 0);
  add(5570, 19, 559);
  add(1, 9, 6129);
  REQUIRE(records.size() == 117019);
  TierConfig cfg;
  const auto profiles = profile_households(records, cfg);
  const auto rows = test_accounting(records, profiles, cfg);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].isp == "Telstra");
  CHECK(rows[0].year == 2015);
  CHECK(rows[0].raw == 117019);
  CHECK(rows[0].thresholded == 11180);
  CHECK(rows[0].used <= rows[0].thresholded);
  CHECK(rows[0].retained_pct() == doctest::Approx(9.554).epsilon(0.001 / 9.554));

  const auto dir = scratch("table");
  write_records_file((dir / "in.csv").string(), records);
  auto j = nlohmann::json::parse(R"({"input": {"records": "in.csv"}, "importance": {"enabled": false}})");
  const auto res = run_pipeline(pipeline_config_from_json(j, dir), dir / "out");
  CHECK(res.counts.thresholded == 11180);
  CHECK(res.counts.retained_fraction() == doctest::Approx(0.09554).epsilon(0.001));
}

TEST_CASE("refined tiers are never above unrefined ones on shared-IP data") {
  auto j = small_config();
  j["input"]["synth"]["isps"][0]["nat"]["sizes"] = nlohmann::json::parse(R"([{"size": 3, "weight": 1}])");
  j["importance"]["enabled"] = false;
  j["matching"].erase("pairs");
  auto refined = pipeline_config_from_json(j);
  j["tiers"]["refined"] = false;
  auto plain = pipeline_config_from_json(j);
  const auto r = run_pipeline(refined, scratch("refined"));
  const auto u = run_pipeline(plain, scratch("unrefined"));
  CHECK(r.counts.single_household < u.counts.single_household);
  std::map<std::string, double> plain_tier;
  for (const auto& p : u.profiles)
    if (p.tier_mbps) plain_tier[p.client_ip] = *p.tier_mbps;
  std::size_t compared = 0;
  for (const auto& p : r.profiles)
    if (p.tier_mbps && plain_tier.contains(p.client_ip)) {
      CHECK(*p.tier_mbps <= plain_tier[p.client_ip]);
      ++compared;
    }
  CHECK(compared > 0);
}

TEST_CASE("config errors") {
  auto bad = small_config();
  bad["colour"] = "blue";
  CHECK_THROWS_AS(pipeline_config_from_json(bad), ConfigError);
  bad = small_config();
  bad["input"]["records"] = "x.csv";
  CHECK_THROWS_AS(pipeline_config_from_json(bad), ConfigError);
  bad = small_config();
  bad["tiers"]["alpha"] = 1.5;
  CHECK_THROWS_AS(pipeline_config_from_json(bad), ConfigError);
  bad = small_config();
  bad["input"]["synth"]["isps"] = nlohmann::json::array();
  CHECK_THROWS_AS(pipeline_config_from_json(bad), ConfigError);
  bad = nlohmann::json::parse(R"({"input": {"raw": "r.csv"}})");
  CHECK_THROWS_AS(pipeline_config_from_json(bad), ConfigError);
  CHECK_THROWS_AS(load_pipeline_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("missing input fails in the ingest stage") {
  const auto cfg = pipeline_config_from_json(nlohmann::json::parse(R"({"input": {"records": "/nonexistent/in.csv"}})"));
  try {
    run_pipeline(cfg, scratch("stage"));
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage == "ingest");
  }
}

#ifdef DEBIAS_CLI
TEST_CASE("command line exit codes") {
  const auto dir = scratch("cli");
  const std::string cli = DEBIAS_CLI;
  auto run = [&](const std::string& args) {
    const int status = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  {
    std::ofstream(dir / "bad.json") << R"({"input": {"synth": {"isps": []}}, "bogus": 1})";
    std::ofstream(dir / "stage.json") << R"({"input": {"records": "missing.csv"}})";
    std::ofstream(dir / "good.json") << small_config().dump();
  }
  CHECK(run("--version") == 0);
  CHECK(run("no-such-command") == 2);
  CHECK(run("pipeline --config " + (dir / "bad.json").string() + " --out-dir " + (dir / "o1").string()) == 2);
  CHECK(run("pipeline --config " + (dir / "stage.json").string() + " --out-dir " + (dir / "o2").string()) == 3);
  CHECK(run("pipeline --config " + (dir / "good.json").string() + " --out-dir " + (dir / "o3").string()) == 0);
  CHECK(fs::exists(dir / "o3" / "manifest.json"));
  CHECK(run("match --in " + (dir / "o3" / "records.csv").string() + " --profiles " + (dir / "o3" / "profiles.csv").string() +
            " --treat A --control B --replacement maybe") == 2);
}
#endif

#include "debias/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <random>

#include "debias/csv.hpp"

namespace debias {

namespace {

std::uint64_t mix3(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t x = a ^ (b * 0x9e3779b97f4a7c15ULL) ^ (c * 0xc2b2ae3d27d4eb4fULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void check_weights(const std::vector<double>& w, const std::string& what) {
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw Error(what + ": negative weight");
    total += v;
  }
  if (std::fabs(total - 1.0) > 1e-6) throw Error(what + ": weights must sum to 1");
}

template <typename Rng>
double uniform01_open_low(Rng& rng) {
  // (0, 1]
  return 1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

template <typename Rng>
std::size_t pick(Rng& rng, const std::vector<double>& weights) {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

YearMonth add_months(YearMonth ym, int months) {
  const int idx = ym.year * 12 + (ym.month - 1) + months;
  return YearMonth{idx / 12, idx % 12 + 1};
}

}  // namespace

void SynthSpec::validate() const {
  if (isps.empty()) throw Error("synth spec has no ISPs");
  if (months < 1) throw Error("synth spec needs at least one month");
  if (noise_sd < 0 || relative_noise_sd < 0) throw Error("noise SDs must be non-negative");
  if (outlier_rate < 0 || outlier_rate > 1) throw Error("outlier_rate must be in [0, 1]");
  if (!(outlier_multiplier > 0)) throw Error("outlier_multiplier must be positive");
  if (congestion.slack_weight < 0 || congestion.capacity_weight < 0 || congestion.epoch_sd < 0)
    throw Error("congestion weights must be non-negative");
  if (tests.min < 1 || tests.max < tests.min) throw Error("bad test-count range");
  if (tests.kind == TestCountModel::Kind::Pareto && !(tests.alpha > 0)) throw Error("Pareto alpha must be positive");
  for (const auto& isp : isps) {
    const std::string who = "ISP '" + isp.name + "'";
    if (isp.name.empty()) throw Error("ISP without a name");
    if (isp.households == 0) throw Error(who + " has no households");
    if (!std::isfinite(isp.effect_mbps)) throw Error(who + ": effect must be finite");
    if (isp.tiers.empty()) throw Error(who + ": empty tier mixture");
    std::vector<double> w;
    for (const auto& t : isp.tiers) {
      if (!(t.low >= 0 && t.high > t.low && t.shape > 0)) throw Error(who + ": bad tier component");
      w.push_back(t.weight);
    }
    check_weights(w, who + " tiers");
    w.clear();
    for (const auto& m : isp.mss) {
      if (!(m.value > 0)) throw Error(who + ": MSS must be positive");
      w.push_back(m.weight);
    }
    check_weights(w, who + " mss");
    check_weights({isp.p_modern, isp.p_legacy, isp.p_other}, who + " os mix");
    w.clear();
    for (const auto& n : isp.nat_sizes) {
      if (n.value < 1 || n.value != std::floor(n.value)) throw Error(who + ": NAT sizes must be positive integers");
      w.push_back(n.weight);
    }
    check_weights(w, who + " nat sizes");
    if (isp.rwnd_median_bytes <= 0 || isp.rtt_median_ms <= 0) throw Error(who + ": medians must be positive");
    if (isp.rwnd_log_sd < 0 || isp.rtt_log_sd < 0 || isp.rtt_jitter_log_sd < 0) throw Error(who + ": negative spread");
    if (isp.client_limited_mean < 0 || isp.client_limited_mean > 0.5) throw Error(who + ": client_limited_mean in [0, 0.5]");
    if (isp.nat_tier_ratio < 0) throw Error(who + ": negative nat_tier_ratio");
  }
  if (isps.size() > 250) throw Error("at most 250 ISPs");
}

SynthData generate(const SynthSpec& spec) {
  spec.validate();
  SynthData out;
  const YearMonth end_ym = add_months(spec.start, spec.months);

  std::size_t household_id = 0;
  for (std::size_t k = 0; k < spec.isps.size(); ++k) {
    const auto& isp = spec.isps[k];
    out.truth.isp_effects.emplace_back(isp.name, isp.effect_mbps);

    std::vector<double> tier_w, mss_w, nat_w;
    for (const auto& t : isp.tiers) tier_w.push_back(t.weight);
    for (const auto& m : isp.mss) mss_w.push_back(m.weight);
    for (const auto& n : isp.nat_sizes) nat_w.push_back(n.weight);
    const std::vector<double> os_w = {isp.p_modern, isp.p_legacy, isp.p_other};
    const std::int64_t t0 = epoch_from_civil(spec.start.year, spec.start.month, 1) - isp.utc_offset_minutes * 60LL;
    const std::int64_t t1 = epoch_from_civil(end_ym.year, end_ym.month, 1) - isp.utc_offset_minutes * 60LL;

    std::size_t placed = 0;
    for (std::size_t group = 0; placed < isp.households; ++group) {
      if (group >= 65536) throw Error("too many IPs for one synthetic ISP");
      std::mt19937_64 rng(mix3(spec.seed, k + 1, group + 1));
      const auto size = std::min<std::size_t>(static_cast<std::size_t>(isp.nat_sizes[pick(rng, nat_w)].value),
                                              isp.households - placed);
      placed += size;
      const std::string ip = "10." + std::to_string(k) + "." + std::to_string(group / 256) + "." +
                             std::to_string(group % 256);

      std::vector<double> epoch(static_cast<std::size_t>(spec.months));
      std::normal_distribution<double> std_normal(0.0, 1.0);
      for (auto& e : epoch) e = std::fabs(std_normal(rng)) * spec.congestion.epoch_sd;

      const auto& comp0 = isp.tiers[pick(rng, tier_w)];
      const double base_tier = comp0.low + (comp0.high - comp0.low) * std::pow(uniform01_open_low(rng), comp0.shape);

      for (std::size_t member = 0; member < size; ++member) {
        HouseholdTruth h;
        h.household = household_id++;
        h.isp = isp.name;
        h.client_ip = ip;
        h.nat_group_size = size;
        if (member == 0) {
          h.tier_mbps = base_tier;
        } else if (isp.nat_tier_ratio > 0 && size > 1) {
          h.tier_mbps = base_tier * std::pow(isp.nat_tier_ratio, static_cast<double>(member) / static_cast<double>(size - 1));
        } else {
          const auto& c = isp.tiers[pick(rng, tier_w)];
          h.tier_mbps = c.low + (c.high - c.low) * std::pow(uniform01_open_low(rng), c.shape);
        }
        h.os_class = static_cast<OsClass>(pick(rng, os_w));
        double rwnd = isp.rwnd_median_bytes * std::exp(isp.rwnd_log_sd * std_normal(rng));
        if (h.os_class == OsClass::LegacyNoAutotuning) rwnd = std::min(rwnd, 65535.0);
        h.rwnd_bytes = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(rwnd)));
        h.base_rtt_ms = isp.rtt_median_ms * std::exp(isp.rtt_log_sd * std_normal(rng));
        const auto mss = static_cast<std::int64_t>(isp.mss[pick(rng, mss_w)].value);
        const double clf_mean = isp.client_limited_mean;

        std::int64_t n_tests = spec.tests.min;
        switch (spec.tests.kind) {
          case TestCountModel::Kind::Fixed: break;
          case TestCountModel::Kind::Uniform:
            n_tests = std::uniform_int_distribution<std::int64_t>(spec.tests.min, spec.tests.max)(rng);
            break;
          case TestCountModel::Kind::Pareto: {
            const double draw = static_cast<double>(spec.tests.min) * std::pow(uniform01_open_low(rng), -1.0 / spec.tests.alpha);
            n_tests = std::min<std::int64_t>(spec.tests.max, static_cast<std::int64_t>(std::floor(draw)));
            break;
          }
        }
        h.tests = static_cast<std::size_t>(n_tests);

        const double os_factor = h.os_class == OsClass::ModernAutotuning   ? 1.0
                                 : h.os_class == OsClass::LegacyNoAutotuning ? spec.os_factor_legacy
                                                                             : spec.os_factor_other;
        std::vector<TestRecord> tests;
        for (std::int64_t t = 0; t < n_tests; ++t) {
          TestRecord r;
          r.client_ip = ip;
          r.isp = isp.name;
          r.country = isp.country;
          r.utc_offset_minutes = isp.utc_offset_minutes;
          r.timestamp_utc = std::uniform_int_distribution<std::int64_t>(t0, t1 - 1)(rng);
          r.local_hour = local_hour_of(r.timestamp_utc, r.utc_offset_minutes);
          r.min_rtt_ms = h.base_rtt_ms * std::exp(isp.rtt_jitter_log_sd * std_normal(rng));
          r.mss_bytes = mss;
          r.rwnd_bytes = h.rwnd_bytes;
          r.os_class = h.os_class;
          r.client_limited_frac =
              clf_mean > 0 ? std::min(1.0, std::exponential_distribution<double>(1.0 / clf_mean)(rng)) : 0.0;

          const double window_mbps = static_cast<double>(r.rwnd_bytes) * 8.0 / (r.min_rtt_ms * 1000.0);
          double eff = os_factor * (1.0 - std::exp(-window_mbps / h.tier_mbps)) *
                       (1.0 - spec.client_limited_weight * r.client_limited_frac);
          if (r.peak()) eff *= spec.peak_factor;
          double speed = h.tier_mbps * eff * (1.0 + spec.relative_noise_sd * std_normal(rng)) + isp.effect_mbps +
                         spec.noise_sd * std_normal(rng);
          speed = std::max(speed, 0.1);
          if (spec.outlier_rate > 0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < spec.outlier_rate)
            speed *= spec.outlier_multiplier;
          r.download_mbps = speed;

          const auto ym = r.year_month();
          const int month_idx = std::clamp((ym.year * 12 + ym.month - 1) - (spec.start.year * 12 + spec.start.month - 1), 0,
                                           spec.months - 1);
          const double slack = std::max(0.0, 1.0 - speed / h.tier_mbps);
          const double lambda = spec.congestion.slack_weight * slack + spec.congestion.capacity_weight * h.tier_mbps +
                                epoch[static_cast<std::size_t>(month_idx)];
          r.congestion_count = lambda > 0 ? std::poisson_distribution<std::int64_t>(lambda)(rng) : 0;
          tests.push_back(std::move(r));
        }
        std::stable_sort(tests.begin(), tests.end(),
                         [](const TestRecord& a, const TestRecord& b) { return a.timestamp_utc < b.timestamp_utc; });
        out.records.insert(out.records.end(), std::make_move_iterator(tests.begin()), std::make_move_iterator(tests.end()));
        out.truth.households.push_back(std::move(h));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key) && !j.at(key).is_null()) field = j.at(key).get<T>();
}

std::vector<WeightedValue> weighted_list(const nlohmann::json& arr, const char* value_key) {
  std::vector<WeightedValue> out;
  for (const auto& e : arr) out.push_back({e.at(value_key).get<double>(), e.value("weight", 1.0)});
  return out;
}

}  // namespace

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    maybe(j, "seed", s.seed);
    if (j.contains("start")) s.start = YearMonth::parse(j.at("start").get<std::string>());
    maybe(j, "months", s.months);
    maybe(j, "noise_sd", s.noise_sd);
    maybe(j, "relative_noise_sd", s.relative_noise_sd);
    maybe(j, "peak_factor", s.peak_factor);
    maybe(j, "client_limited_weight", s.client_limited_weight);
    maybe(j, "os_factor_legacy", s.os_factor_legacy);
    maybe(j, "os_factor_other", s.os_factor_other);
    if (j.contains("congestion")) {
      const auto& c = j.at("congestion");
      maybe(c, "slack_weight", s.congestion.slack_weight);
      maybe(c, "capacity_weight", s.congestion.capacity_weight);
      maybe(c, "epoch_sd", s.congestion.epoch_sd);
    }
    if (j.contains("tests")) {
      const auto& t = j.at("tests");
      const auto kind = t.value("kind", std::string("uniform"));
      if (kind == "fixed") s.tests.kind = TestCountModel::Kind::Fixed;
      else if (kind == "uniform") s.tests.kind = TestCountModel::Kind::Uniform;
      else if (kind == "pareto") s.tests.kind = TestCountModel::Kind::Pareto;
      else throw Error("unknown test-count kind '" + kind + "'");
      maybe(t, "min", s.tests.min);
      s.tests.max = s.tests.min;
      if (s.tests.kind != TestCountModel::Kind::Fixed) s.tests.max = std::max(s.tests.max, std::int64_t{40});
      maybe(t, "max", s.tests.max);
      maybe(t, "alpha", s.tests.alpha);
    }
    if (j.contains("outliers")) {
      maybe(j.at("outliers"), "rate", s.outlier_rate);
      maybe(j.at("outliers"), "multiplier", s.outlier_multiplier);
    }
    for (const auto& ji : j.at("isps")) {
      IspSynth isp;
      isp.name = ji.at("name").get<std::string>();
      maybe(ji, "country", isp.country);
      maybe(ji, "region", isp.region);
      maybe(ji, "utc_offset_minutes", isp.utc_offset_minutes);
      maybe(ji, "households", isp.households);
      maybe(ji, "effect_mbps", isp.effect_mbps);
      if (ji.contains("tiers")) {
        isp.tiers.clear();
        for (const auto& t : ji.at("tiers"))
          isp.tiers.push_back({t.at("low").get<double>(), t.at("high").get<double>(), t.value("weight", 1.0),
                               t.value("shape", 1.0)});
      }
      if (ji.contains("rwnd")) {
        maybe(ji.at("rwnd"), "median", isp.rwnd_median_bytes);
        maybe(ji.at("rwnd"), "log_sd", isp.rwnd_log_sd);
      }
      if (ji.contains("rtt")) {
        maybe(ji.at("rtt"), "median", isp.rtt_median_ms);
        maybe(ji.at("rtt"), "log_sd", isp.rtt_log_sd);
        maybe(ji.at("rtt"), "jitter_log_sd", isp.rtt_jitter_log_sd);
      }
      if (ji.contains("mss")) isp.mss = weighted_list(ji.at("mss"), "value");
      if (ji.contains("os")) {
        maybe(ji.at("os"), "modern", isp.p_modern);
        maybe(ji.at("os"), "legacy", isp.p_legacy);
        maybe(ji.at("os"), "other", isp.p_other);
      }
      maybe(ji, "client_limited_mean", isp.client_limited_mean);
      if (ji.contains("nat")) {
        if (ji.at("nat").contains("sizes")) isp.nat_sizes = weighted_list(ji.at("nat").at("sizes"), "size");
        maybe(ji.at("nat"), "tier_ratio", isp.nat_tier_ratio);
      }
      if (isp.region.empty()) isp.region = isp.country + "-" + isp.name;
      s.isps.push_back(std::move(isp));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::ordered_json to_json(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  j["start"] = s.start.str();
  j["months"] = s.months;
  j["noise_sd"] = s.noise_sd;
  j["relative_noise_sd"] = s.relative_noise_sd;
  j["peak_factor"] = s.peak_factor;
  j["client_limited_weight"] = s.client_limited_weight;
  j["os_factor_legacy"] = s.os_factor_legacy;
  j["os_factor_other"] = s.os_factor_other;
  j["congestion"] = {{"slack_weight", s.congestion.slack_weight},
                     {"capacity_weight", s.congestion.capacity_weight},
                     {"epoch_sd", s.congestion.epoch_sd}};
  const char* kinds[] = {"fixed", "uniform", "pareto"};
  j["tests"] = {{"kind", kinds[static_cast<int>(s.tests.kind)]},
                {"min", s.tests.min},
                {"max", s.tests.max},
                {"alpha", s.tests.alpha}};
  j["outliers"] = {{"rate", s.outlier_rate}, {"multiplier", s.outlier_multiplier}};
  auto isps = nlohmann::ordered_json::array();
  for (const auto& i : s.isps) {
    nlohmann::ordered_json ji;
    ji["name"] = i.name;
    ji["country"] = i.country;
    ji["region"] = i.region.empty() ? i.country + "-" + i.name : i.region;
    ji["utc_offset_minutes"] = i.utc_offset_minutes;
    ji["households"] = i.households;
    ji["effect_mbps"] = i.effect_mbps;
    auto tiers = nlohmann::ordered_json::array();
    for (const auto& t : i.tiers) tiers.push_back({{"low", t.low}, {"high", t.high}, {"weight", t.weight}, {"shape", t.shape}});
    ji["tiers"] = tiers;
    ji["rwnd"] = {{"median", i.rwnd_median_bytes}, {"log_sd", i.rwnd_log_sd}};
    ji["rtt"] = {{"median", i.rtt_median_ms}, {"log_sd", i.rtt_log_sd}, {"jitter_log_sd", i.rtt_jitter_log_sd}};
    auto mss = nlohmann::ordered_json::array();
    for (const auto& m : i.mss) mss.push_back({{"value", m.value}, {"weight", m.weight}});
    ji["mss"] = mss;
    ji["os"] = {{"modern", i.p_modern}, {"legacy", i.p_legacy}, {"other", i.p_other}};
    ji["client_limited_mean"] = i.client_limited_mean;
    auto sizes = nlohmann::ordered_json::array();
    for (const auto& n : i.nat_sizes) sizes.push_back({{"size", n.value}, {"weight", n.weight}});
    ji["nat"] = {{"sizes", sizes}, {"tier_ratio", i.nat_tier_ratio}};
    isps.push_back(std::move(ji));
  }
  j["isps"] = isps;
  return j;
}

SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open synth spec " + path);
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error("synth spec is not valid JSON: " + path);
  return synth_spec_from_json(j);
}

nlohmann::ordered_json to_json(const GroundTruth& truth) {
  nlohmann::ordered_json j;
  auto effects = nlohmann::ordered_json::object();
  for (const auto& [isp, e] : truth.isp_effects) effects[isp] = e;
  j["isp_effects"] = effects;
  auto hh = nlohmann::ordered_json::array();
  for (const auto& h : truth.households)
    hh.push_back({{"household", h.household},
                  {"isp", h.isp},
                  {"ip", h.client_ip},
                  {"nat_group_size", h.nat_group_size},
                  {"tier_mbps", h.tier_mbps},
                  {"os_class", std::string(to_string(h.os_class))},
                  {"rwnd_bytes", h.rwnd_bytes},
                  {"base_rtt_ms", h.base_rtt_ms},
                  {"tests", h.tests}});
  j["households"] = hh;
  return j;
}

void write_raw_export(const SynthSpec& spec, const std::vector<TestRecord>& records, std::ostream& raw,
                      std::ostream& prefix_map, std::ostream& tz_table) {
  raw << "ip,timestamp_utc,region,isp_hint,download_mbps,min_rtt_ms,mss_bytes,rwnd_bytes,os,congestion_count,"
         "client_limited_frac\n";
  prefix_map << "cidr,isp,country\n";
  tz_table << "region,utc_offset_minutes\n";
  std::map<std::string, const IspSynth*> by_name;
  for (std::size_t k = 0; k < spec.isps.size(); ++k) {
    const auto& isp = spec.isps[k];
    by_name[isp.name] = &isp;
    csv::write_row(prefix_map, {"10." + std::to_string(k) + ".0.0/16", isp.name, isp.country});
    csv::write_row(tz_table, {isp.region.empty() ? isp.country + "-" + isp.name : isp.region,
                              std::to_string(isp.utc_offset_minutes)});
  }
  for (const auto& r : records) {
    const auto* isp = by_name.at(r.isp);
    const char* os = r.os_class == OsClass::ModernAutotuning   ? "Linux 4.4"
                     : r.os_class == OsClass::LegacyNoAutotuning ? "Windows XP"
                                                                 : "Linux 2.6.32";
    csv::write_row(raw, {r.client_ip, std::to_string(r.timestamp_utc),
                         isp->region.empty() ? isp->country + "-" + isp->name : isp->region, r.isp,
                         format_double(r.download_mbps), format_double(r.min_rtt_ms), std::to_string(r.mss_bytes),
                         std::to_string(r.rwnd_bytes), os, std::to_string(r.congestion_count),
                         format_double(r.client_limited_frac)});
  }
}

}  // namespace debias

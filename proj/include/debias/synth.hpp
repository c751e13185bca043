#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "debias/common.hpp"
#include "debias/ingest.hpp"
#include "json.hpp"

namespace debias {

/// Mixture component: tier = low + (high - low) * u^shape with u ~ U(0, 1].
struct TierComponent {
  double low = 0.0;
  double high = 8.0;
  double weight = 1.0;
  double shape = 1.0;
};

struct WeightedValue {
  double value = 0.0;
  double weight = 1.0;
};

struct IspSynth {
  std::string name;
  std::string country = "AU";
  std::string region;  // defaults to "<country>-<name>"
  int utc_offset_minutes = 600;
  std::size_t households = 100;
  double effect_mbps = 0.0;  // additive ground-truth ISP effect
  std::vector<TierComponent> tiers = {{12.0, 20.0, 1.0, 1.0}};
  double rwnd_median_bytes = 262144.0;
  double rwnd_log_sd = 0.5;
  double rtt_median_ms = 25.0;
  double rtt_log_sd = 0.4;
  double rtt_jitter_log_sd = 0.1;  // per test around the household base
  std::vector<WeightedValue> mss = {{1460.0, 1.0}};
  double p_modern = 0.85;
  double p_legacy = 0.10;
  double p_other = 0.05;
  double client_limited_mean = 0.05;
  std::vector<WeightedValue> nat_sizes = {{1.0, 1.0}};  // households sharing one IP
  /// > 0: tiers inside a NAT group are spaced geometrically from the drawn tier up to tier * ratio.
  double nat_tier_ratio = 0.0;
};

/// Test-count distribution per household (per IP for NAT groups, per household member).
struct TestCountModel {
  enum class Kind { Fixed, Uniform, Pareto };
  Kind kind = Kind::Uniform;
  std::int64_t min = 20;
  std::int64_t max = 40;
  double alpha = 1.2;  // Pareto tail index
};

struct CongestionModel {
  double slack_weight = 20.0;     // per unit of (1 - speed/tier)
  double capacity_weight = 0.1;   // per Mbps of tier
  double epoch_sd = 0.5;          // half-normal per (IP, month) network state
};

/// Generative model for synthetic speed-test records with known ground truth.
struct SynthSpec {
  std::uint64_t seed = 1;
  YearMonth start{2016, 1};
  int months = 12;
  double noise_sd = 0.5;           // additive, Mbps
  double relative_noise_sd = 0.08; // multiplicative on the capacity-limited speed
  double peak_factor = 0.9;
  double client_limited_weight = 0.3;
  double os_factor_legacy = 0.95;
  double os_factor_other = 0.97;
  CongestionModel congestion;
  TestCountModel tests;
  double outlier_rate = 0.0;
  double outlier_multiplier = 2.0;
  std::vector<IspSynth> isps;

  /// Throws debias::Error for empty ISP lists, bad probabilities or negative spreads.
  void validate() const;
};

SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const SynthSpec& spec);
SynthSpec load_synth_spec(const std::string& path);

struct HouseholdTruth {
  std::size_t household = 0;
  std::string isp;
  std::string client_ip;
  std::size_t nat_group_size = 1;
  double tier_mbps = 0.0;
  OsClass os_class = OsClass::Other;
  std::int64_t rwnd_bytes = 0;
  double base_rtt_ms = 0.0;
  std::size_t tests = 0;
};

struct GroundTruth {
  std::vector<HouseholdTruth> households;
  std::vector<std::pair<std::string, double>> isp_effects;
};

struct SynthData {
  std::vector<TestRecord> records;
  GroundTruth truth;
};

/// Deterministic under spec.seed. Each NAT group draws from its own counter-seeded engine.
/// speed = tier * eff(covariates) * (1 + rel_noise) + isp_effect + noise, floored at 0.1 Mbps.
SynthData generate(const SynthSpec& spec);

nlohmann::ordered_json to_json(const GroundTruth& truth);

/// Companion files for exercising `ingest` on synthetic data: raw CSV, prefix map and timezone table.
void write_raw_export(const SynthSpec& spec, const std::vector<TestRecord>& records, std::ostream& raw,
                      std::ostream& prefix_map, std::ostream& tz_table);

}  // namespace debias

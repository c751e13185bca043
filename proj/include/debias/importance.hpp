#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "debias/forest.hpp"
#include "debias/ingest.hpp"
#include "debias/tiers.hpp"

namespace debias {

/// Covariate columns fed to the forest, in order. Client-limited time is deliberately absent.
inline const std::vector<std::string> kImportanceFeatures = {"tier_mbps", "rwnd_bytes", "min_rtt_ms", "mss_bytes",
                                                             "os_class",  "isp",        "local_hour"};

/// One row per test whose household has an estimated tier; other tests are dropped and counted.
/// `os_class` uses the OsClass codes, `isp` codes follow the sorted ISP names.
FeatureMatrix build_feature_matrix(std::span<const TestRecord> records, std::span<const HouseholdProfile> profiles);

struct FeatureImportance {
  std::string name;
  double score = 0.0;      // mean OOB MSE increase, floored at 0
  double raw_score = 0.0;  // unfloored mean
  double std_error = 0.0;  // across repeats
  std::size_t rank = 0;    // 1 = most important
  double share = 0.0;
};

struct ImportanceReport {
  std::vector<FeatureImportance> features;  // matrix column order
  std::size_t trees = 0;
  std::size_t max_depth = 0;
  std::uint64_t seed = 0;
  std::size_t rows = 0;
  double baseline_oob_mse = 0.0;

  const FeatureImportance& operator[](const std::string& name) const;
};

/// Mean increase in out-of-bag MSE when each column is permuted, averaged over `repeats`.
ImportanceReport permutation_importance(const RandomForest& forest, const FeatureMatrix& m, std::size_t repeats,
                                        std::uint64_t seed);

/// Same measure with several columns permuted jointly by one shared permutation.
double group_permutation_importance(const RandomForest& forest, const FeatureMatrix& m,
                                    std::span<const std::size_t> cols, std::size_t repeats, std::uint64_t seed);

/// Columns `feature,score,rank,share`.
void write_importance_csv(std::ostream& out, const ImportanceReport& report);

}  // namespace debias

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace debias {

/// Dense row-major design matrix with a regression target.
struct FeatureMatrix {
  std::vector<std::string> names;
  std::vector<double> values;  // rows * cols
  std::vector<double> target;
  /// Categorical columns: code -> label.
  std::map<std::string, std::vector<std::string>> codebooks;
  std::size_t dropped_rows = 0;

  std::size_t cols() const { return names.size(); }
  std::size_t rows() const { return target.size(); }
  double at(std::size_t row, std::size_t col) const { return values[row * cols() + col]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }
  void add_row(std::span<const double> x, double y);
};

struct ForestParams {
  std::size_t trees = 200;
  std::size_t max_depth = 12;
  std::size_t min_leaf = 5;
  /// 0 selects ceil(sqrt(p)).
  std::size_t features_per_split = 0;
  std::uint64_t seed = 42;
  /// 0 selects std::thread::hardware_concurrency().
  std::size_t threads = 0;
};

class RegressionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    double value = 0.0;
  };

  /// `value(col)` yields the feature value of the row being predicted.
  template <typename Accessor>
  double predict_with(Accessor&& value) const {
    std::size_t i = 0;
    while (nodes_[i].feature >= 0) {
      const auto& n = nodes_[i];
      i = static_cast<std::size_t>(value(static_cast<std::size_t>(n.feature)) <= n.threshold ? n.left : n.right);
    }
    return nodes_[i].value;
  }
  double predict(std::span<const double> x) const {
    return predict_with([&](std::size_t c) { return x[c]; });
  }

  RegressionTree() = default;
  explicit RegressionTree(std::vector<Node> nodes) : nodes_(std::move(nodes)) {}

  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t depth() const;

 private:
  std::vector<Node> nodes_;
};

/// Bagged CART regression forest with variance-reduction splits.
class RandomForest {
 public:
  /// Requires >= 2 rows and >= 1 column. Deterministic for a given seed regardless of thread count.
  static RandomForest fit(const FeatureMatrix& m, const ForestParams& params);

  /// Mean of the per-tree predictions.
  double predict(std::span<const double> x) const;

  /// Out-of-bag predictions; rows never out of bag get NaN. Columns listed in `permuted_cols`
  /// read their value from row `perm[i]` instead of row i.
  std::vector<double> oob_predict(const FeatureMatrix& m, std::span<const std::size_t> permuted_cols = {},
                                  std::span<const std::size_t> perm = {}) const;

  /// Mean squared error over rows with at least one out-of-bag tree.
  static double oob_mse(std::span<const double> predictions, std::span<const double> target);
  double oob_r2(const FeatureMatrix& m) const;

  const std::vector<RegressionTree>& trees() const { return trees_; }
  const std::vector<std::string>& feature_names() const { return names_; }
  const ForestParams& params() const { return params_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  bool in_bag(std::size_t tree, std::size_t row) const { return in_bag_[tree][row]; }

  /// Versioned JSON dump of the fitted trees.
  std::string to_json() const;

 private:
  std::vector<RegressionTree> trees_;
  std::vector<std::vector<bool>> in_bag_;
  std::vector<std::string> names_;
  ForestParams params_;
  std::vector<std::string> warnings_;
};

}  // namespace debias

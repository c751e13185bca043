#include "debias/forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include "debias/common.hpp"
#include "json.hpp"

namespace debias {

void FeatureMatrix::add_row(std::span<const double> x, double y) {
  if (x.size() != cols()) throw Error("feature row width mismatch");
  values.insert(values.end(), x.begin(), x.end());
  target.push_back(y);
}

std::size_t RegressionTree::depth() const {
  if (nodes_.empty()) return 0;
  std::vector<std::pair<std::int32_t, std::size_t>> stack{{0, 0}};
  std::size_t best = 0;
  while (!stack.empty()) {
    const auto [i, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    const auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.feature >= 0) {
      stack.push_back({n.left, d + 1});
      stack.push_back({n.right, d + 1});
    }
  }
  return best;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class TreeBuilder {
 public:
  TreeBuilder(const FeatureMatrix& m, const ForestParams& p, std::size_t mtry, std::uint64_t seed)
      : m_(m), p_(p), mtry_(mtry), rng_(seed), features_(m.cols()) {
    std::iota(features_.begin(), features_.end(), std::size_t{0});
  }

  /// Bootstrap-samples the rows, marks `in_bag`, and grows one tree.
  RegressionTree build(std::vector<bool>& in_bag) {
    const std::size_t n = m_.rows();
    std::uniform_int_distribution<std::size_t> draw(0, n - 1);
    std::vector<std::size_t> sample(n);
    in_bag.assign(n, false);
    for (auto& s : sample) {
      s = draw(rng_);
      in_bag[s] = true;
    }
    nodes_.clear();
    grow(sample, 0, n, 0);
    return RegressionTree(std::move(nodes_));
  }

 private:
  std::int32_t grow(std::vector<std::size_t>& idx, std::size_t begin, std::size_t end, std::size_t depth) {
    const auto node_id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({});
    const std::size_t n = end - begin;
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const double y = m_.target[idx[i]];
      sum += y;
      sum_sq += y * y;
    }
    const double mean = sum / static_cast<double>(n);
    nodes_[static_cast<std::size_t>(node_id)].value = mean;
    const double sse = sum_sq - sum * mean;
    if (depth >= p_.max_depth || n < 2 * p_.min_leaf || sse <= 1e-12 * std::max(1.0, sum_sq)) return node_id;

    for (std::size_t k = 0; k < mtry_; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, features_.size() - 1);
      std::swap(features_[k], features_[pick(rng_)]);
    }

    int best_feature = -1;
    // Maximizing sum_L^2/n_L + sum_R^2/n_R minimizes the weighted child variance.
    double best_score = sum * sum / static_cast<double>(n);
    double best_threshold = 0.0;
    for (std::size_t k = 0; k < mtry_; ++k) {
      const std::size_t f = features_[k];
      scratch_.clear();
      for (std::size_t i = begin; i < end; ++i) scratch_.push_back({m_.at(idx[i], f), m_.target[idx[i]]});
      std::sort(scratch_.begin(), scratch_.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      double left = 0.0;
      for (std::size_t i = 1; i < n; ++i) {
        left += scratch_[i - 1].second;
        if (i < p_.min_leaf || n - i < p_.min_leaf) continue;
        if (!(scratch_[i - 1].first < scratch_[i].first)) continue;
        const double right = sum - left;
        const double score = left * left / static_cast<double>(i) + right * right / static_cast<double>(n - i);
        if (score > best_score + 1e-12 * std::fabs(best_score) + 1e-12) {
          best_score = score;
          best_feature = static_cast<int>(f);
          const double lo = scratch_[i - 1].first, hi = scratch_[i].first;
          const double mid = lo + (hi - lo) / 2.0;
          best_threshold = mid < hi ? mid : lo;
        }
      }
    }
    if (best_feature < 0) return node_id;

    const auto f = static_cast<std::size_t>(best_feature);
    const auto first = idx.begin() + static_cast<std::ptrdiff_t>(begin);
    const auto last = idx.begin() + static_cast<std::ptrdiff_t>(end);
    const auto mid = static_cast<std::size_t>(
        std::partition(first, last, [&](std::size_t r) { return m_.at(r, f) <= best_threshold; }) - idx.begin());
    const auto l = grow(idx, begin, mid, depth + 1);
    const auto r = grow(idx, mid, end, depth + 1);
    auto& node = nodes_[static_cast<std::size_t>(node_id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return node_id;
  }

  const FeatureMatrix& m_;
  const ForestParams& p_;
  std::size_t mtry_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> features_;
  std::vector<RegressionTree::Node> nodes_;
  std::vector<std::pair<double, double>> scratch_;
};

}  // namespace

RandomForest RandomForest::fit(const FeatureMatrix& m, const ForestParams& params) {
  if (m.rows() < 2) throw Error("forest needs at least 2 rows");
  if (m.cols() < 1) throw Error("forest needs at least 1 feature");
  if (m.values.size() != m.rows() * m.cols()) throw Error("feature matrix shape mismatch");
  if (params.trees == 0) throw Error("forest needs at least one tree");

  RandomForest forest;
  forest.params_ = params;
  forest.names_ = m.names;
  const std::size_t p = m.cols();
  std::size_t mtry = params.features_per_split;
  if (mtry == 0) mtry = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p))));
  forest.params_.features_per_split = mtry = std::min(mtry, p);
  if (params.min_leaf == 0) forest.params_.min_leaf = 1;

  const auto [lo, hi] = std::minmax_element(m.target.begin(), m.target.end());
  if (*lo == *hi) forest.warnings_.push_back("target has zero variance; every tree is a single leaf");

  forest.trees_.resize(params.trees);
  forest.in_bag_.resize(params.trees);
  std::size_t threads = params.threads ? params.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, params.trees);
  auto work = [&](std::size_t worker) {
    for (std::size_t t = worker; t < params.trees; t += threads) {
      TreeBuilder builder(m, forest.params_, mtry, splitmix64(params.seed ^ splitmix64(t)));
      forest.trees_[t] = builder.build(forest.in_bag_[t]);
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
  }
  return forest;
}

double RandomForest::predict(std::span<const double> x) const {
  if (x.size() != names_.size()) throw Error("prediction row width mismatch");
  double sum = 0.0;
  for (const auto& t : trees_) sum += t.predict(x);
  return sum / static_cast<double>(trees_.size());
}

std::vector<double> RandomForest::oob_predict(const FeatureMatrix& m, std::span<const std::size_t> permuted_cols,
                                              std::span<const std::size_t> perm) const {
  if (m.names != names_) throw Error("feature schema does not match the fitted forest");
  if (!permuted_cols.empty() && perm.size() != m.rows()) throw Error("permutation length mismatch");
  const std::size_t n = m.rows();
  if (!in_bag_.empty() && in_bag_.front().size() != n) throw Error("matrix rows differ from training rows");
  std::vector<bool> swapped(m.cols(), false);
  for (auto c : permuted_cols) swapped.at(c) = true;

  std::vector<double> sum(n, 0.0);
  std::vector<std::size_t> count(n, 0);
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    const auto& bag = in_bag_[t];
    for (std::size_t i = 0; i < n; ++i) {
      if (bag[i]) continue;
      sum[i] += trees_[t].predict_with([&](std::size_t c) { return swapped[c] ? m.at(perm[i], c) : m.at(i, c); });
      ++count[i];
    }
  }
  std::vector<double> out(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < n; ++i)
    if (count[i]) out[i] = sum[i] / static_cast<double>(count[i]);
  return out;
}

double RandomForest::oob_mse(std::span<const double> predictions, std::span<const double> target) {
  double sse = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (std::isnan(predictions[i])) continue;
    const double e = predictions[i] - target[i];
    sse += e * e;
    ++n;
  }
  return n ? sse / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

double RandomForest::oob_r2(const FeatureMatrix& m) const {
  const auto pred = oob_predict(m);
  double mean = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (!std::isnan(pred[i])) {
      mean += m.target[i];
      ++n;
    }
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  mean /= static_cast<double>(n);
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (!std::isnan(pred[i])) ss_tot += (m.target[i] - mean) * (m.target[i] - mean);
  if (ss_tot <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return 1.0 - oob_mse(pred, m.target) * static_cast<double>(n) / ss_tot;
}

std::string RandomForest::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "debias-forest";
  j["version"] = 1;
  j["features"] = names_;
  j["params"] = {{"trees", params_.trees},
                 {"max_depth", params_.max_depth},
                 {"min_leaf", params_.min_leaf},
                 {"features_per_split", params_.features_per_split},
                 {"seed", params_.seed}};
  auto trees = nlohmann::ordered_json::array();
  for (const auto& t : trees_) {
    auto nodes = nlohmann::ordered_json::array();
    for (const auto& n : t.nodes()) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    trees.push_back(std::move(nodes));
  }
  j["trees"] = std::move(trees);
  return j.dump();
}

}  // namespace debias

#pragma once

// Random forest of Gini decision trees with bootstrap sampling and
// sqrt-feature subsampling. A sample goes left when x[feature] <= threshold.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "xfire/models/checkpoint.hpp"
#include "xfire/rng.hpp"

namespace xfire::models {

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 0;     // 0 = unlimited
  std::size_t min_leaf = 1;
  std::size_t max_features = 0;  // 0 = round(sqrt(n_features))
  bool bootstrap = true;
  std::uint64_t seed = 7;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  float threshold = 0.0f;
  std::int32_t left = -1;
  std::int32_t right = -1;
  float count0 = 0.0f;  // class counts of training samples reaching the node
  float count1 = 0.0f;

  bool is_leaf() const { return feature < 0; }
  double p1() const { return count1 / static_cast<double>(count0 + count1); }
  bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const float> x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf())
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(nodes[i].feature)] <= nodes[i].threshold ? nodes[i].left
                                                                                                       : nodes[i].right);
    return nodes[i].p1();
  }
  bool operator==(const DecisionTree&) const = default;
};

class RandomForest {
 public:
  std::size_t n_features = 0;
  std::vector<DecisionTree> trees;

  /// Mean of the trees' leaf class-1 fractions. Per-tree values are summed in
  /// sorted order so the result does not depend on tree order.
  double predict_proba(std::span<const float> x) const {
    if (trees.empty()) throw std::logic_error("RandomForest: no trees");
    if (x.size() != n_features) throw std::invalid_argument("RandomForest: feature count mismatch");
    std::vector<double> p(trees.size());
    for (std::size_t t = 0; t < trees.size(); ++t) p[t] = trees[t].predict(x);
    std::sort(p.begin(), p.end());
    double sum = 0.0;
    for (double v : p) sum += v;
    return sum / static_cast<double>(trees.size());
  }

  /// [P(class 0), P(class 1)]
  std::array<double, 2> predict_distribution(std::span<const float> x) const {
    const double p1 = predict_proba(x);
    return {1.0 - p1, p1};
  }

  std::vector<NamedTensor> named_tensors(const std::string& prefix = "rf") const {
    std::vector<NamedTensor> out;
    out.push_back({prefix + ".n_features", nn::Tensor<float>({1}, std::vector<float>{static_cast<float>(n_features)})});
    for (std::size_t t = 0; t < trees.size(); ++t) {
      const auto& nodes = trees[t].nodes;
      std::vector<float> flat;
      flat.reserve(nodes.size() * 6);
      for (const auto& n : nodes) {
        flat.insert(flat.end(), {static_cast<float>(n.feature), n.threshold, static_cast<float>(n.left),
                                 static_cast<float>(n.right), n.count0, n.count1});
      }
      out.push_back({prefix + ".tree" + std::to_string(t), nn::Tensor<float>({nodes.size(), 6}, std::move(flat))});
    }
    return out;
  }

  static RandomForest from_checkpoint(const ModelCheckpoint& ck, const std::string& prefix = "rf") {
    RandomForest f;
    f.n_features = static_cast<std::size_t>(ck.tensor(prefix + ".n_features")[0]);
    for (std::size_t t = 0; ck.has_tensor(prefix + ".tree" + std::to_string(t)); ++t) {
      const auto& flat = ck.tensor(prefix + ".tree" + std::to_string(t));
      if (flat.rank() != 2 || flat.dim(1) != 6) throw CheckpointError(CheckpointError::Kind::format, "bad tree tensor");
      DecisionTree tree;
      for (std::size_t i = 0; i < flat.dim(0); ++i) {
        const float* r = flat.data() + 6 * i;
        tree.nodes.push_back({static_cast<std::int32_t>(r[0]), r[1], static_cast<std::int32_t>(r[2]),
                              static_cast<std::int32_t>(r[3]), r[4], r[5]});
      }
      const auto n = static_cast<std::int32_t>(tree.nodes.size());
      for (const auto& node : tree.nodes)
        if (!node.is_leaf() && (node.left <= 0 || node.left >= n || node.right <= 0 || node.right >= n ||
                                static_cast<std::size_t>(node.feature) >= f.n_features))
          throw CheckpointError(CheckpointError::Kind::format, "tree node out of range");
      f.trees.push_back(std::move(tree));
    }
    return f;
  }

  bool operator==(const RandomForest&) const = default;
};

namespace detail {

struct SplitResult {
  bool found = false;
  std::size_t feature = 0;
  float threshold = 0.0f;
  double impurity = 0.0;  // weighted child impurity (lower is better)
};

inline double gini_weighted(double n0, double n1) {
  const double n = n0 + n1;
  return n > 0 ? n - (n0 * n0 + n1 * n1) / n : 0.0;  // n * gini
}

inline DecisionTree grow_tree(std::span<const std::vector<float>> features, std::span<const std::uint8_t> labels,
                              std::vector<std::uint32_t> sample, const ForestConfig& cfg, std::size_t mtry, Rng& rng) {
  DecisionTree tree;
  struct Work {
    std::size_t node;
    std::size_t begin, end, depth;
  };
  const std::size_t n_features = features[0].size();
  std::vector<std::size_t> feature_order(n_features);
  std::vector<std::pair<float, std::uint8_t>> column;

  tree.nodes.emplace_back();
  std::vector<Work> stack{{0, 0, sample.size(), 0}};
  while (!stack.empty()) {
    const Work w = stack.back();
    stack.pop_back();
    double n0 = 0, n1 = 0;
    for (std::size_t i = w.begin; i < w.end; ++i) (labels[sample[i]] ? n1 : n0) += 1;
    tree.nodes[w.node].count0 = static_cast<float>(n0);
    tree.nodes[w.node].count1 = static_cast<float>(n1);
    const std::size_t count = w.end - w.begin;
    if (n0 == 0 || n1 == 0 || count < 2 * cfg.min_leaf || (cfg.max_depth && w.depth >= cfg.max_depth)) continue;

    // Visit features in random order until mtry non-constant ones were evaluated.
    std::iota(feature_order.begin(), feature_order.end(), std::size_t{0});
    SplitResult best;
    best.impurity = gini_weighted(n0, n1);
    std::size_t evaluated = 0;
    for (std::size_t k = 0; k < n_features && evaluated < mtry; ++k) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(k, n_features - 1));
      std::swap(feature_order[k], feature_order[j]);
      const std::size_t f = feature_order[k];
      column.clear();
      for (std::size_t i = w.begin; i < w.end; ++i) column.emplace_back(features[sample[i]][f], labels[sample[i]]);
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      ++evaluated;
      double l0 = 0, l1 = 0;
      for (std::size_t i = 0; i + 1 < column.size(); ++i) {
        (column[i].second ? l1 : l0) += 1;
        if (column[i].first == column[i + 1].first) continue;
        const std::size_t nl = i + 1;
        if (nl < cfg.min_leaf || count - nl < cfg.min_leaf) continue;
        const double imp = gini_weighted(l0, l1) + gini_weighted(n0 - l0, n1 - l1);
        if (imp < best.impurity - 1e-12) {
          const float a = column[i].first, b = column[i + 1].first;
          float thr = a + (b - a) * 0.5f;
          if (!(thr >= a && thr < b)) thr = a;
          best = {true, f, thr, imp};
        }
      }
    }
    if (!best.found) continue;

    const auto mid = std::partition(sample.begin() + static_cast<std::ptrdiff_t>(w.begin),
                                     sample.begin() + static_cast<std::ptrdiff_t>(w.end),
                                     [&](std::uint32_t s) { return features[s][best.feature] <= best.threshold; });
    const auto split = static_cast<std::size_t>(mid - sample.begin());
    const auto left = tree.nodes.size();
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    auto& node = tree.nodes[w.node];
    node.feature = static_cast<std::int32_t>(best.feature);
    node.threshold = best.threshold;
    node.left = static_cast<std::int32_t>(left);
    node.right = static_cast<std::int32_t>(left + 1);
    stack.push_back({left + 1, split, w.end, w.depth + 1});
    stack.push_back({left, w.begin, split, w.depth + 1});
  }
  return tree;
}

}  // namespace detail

/// Deterministic given cfg.seed: tree t draws from its own derived stream.
inline RandomForest train_random_forest(std::span<const std::vector<float>> features,
                                        std::span<const std::uint8_t> labels, const ForestConfig& cfg) {
  if (features.empty() || features.size() != labels.size())
    throw std::invalid_argument("train_random_forest: features and labels must be nonempty and aligned");
  const std::size_t d = features[0].size();
  for (const auto& f : features)
    if (f.size() != d) throw std::invalid_argument("train_random_forest: ragged features");
  const auto positives = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
  if (positives == 0 || positives == labels.size())
    throw std::invalid_argument("train_random_forest: need both classes in the training labels");
  if (cfg.n_trees == 0 || cfg.min_leaf == 0) throw std::invalid_argument("train_random_forest: invalid config");

  const std::size_t mtry =
      cfg.max_features ? std::min(cfg.max_features, d)
                       : std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d)))));
  RandomForest forest;
  forest.n_features = d;
  const auto n = static_cast<std::uint32_t>(features.size());
  for (std::size_t t = 0; t < cfg.n_trees; ++t) {
    Rng rng(derive_seed(cfg.seed, t, Stream::forest));
    std::vector<std::uint32_t> sample(n);
    if (cfg.bootstrap)
      for (auto& s : sample) s = static_cast<std::uint32_t>(rng.uniform_int(0, n - 1));
    else
      std::iota(sample.begin(), sample.end(), 0u);
    forest.trees.push_back(detail::grow_tree(features, labels, std::move(sample), cfg, mtry, rng));
  }
  return forest;
}

inline std::vector<double> rf_score(const RandomForest& forest, std::span<const std::vector<float>> features) {
  std::vector<double> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(forest.predict_proba(f));
  return out;
}

}  // namespace xfire::models

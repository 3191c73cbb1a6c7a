#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <utility>
#include <span>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "lf2i/core/types.hpp"

namespace lf2i::learners {

/// Hyperparameters shared by all boosted-tree learners.
struct TreeParams {
  int max_depth = 3;
  int rounds = 300;
  double learning_rate = 0.1;
  double subsample = 1.0;
  std::size_t min_samples_leaf = 20;
  double l2 = 1.0;
  int max_bins = 255;
  // Early stopping: hold out this fraction, keep the round count with the
  // lowest held-out loss, then refit on all rows. 0 disables.
  double validation_fraction = 0.0;
  int patience = 30;
  // Take the fewest rounds whose held-out loss is within one standard error
  // of the best, instead of the best itself.
  bool one_se_rule = false;

  void validate() const {
    if (max_depth < 1 || rounds < 1 || !(learning_rate > 0.0) || !(subsample > 0.0 && subsample <= 1.0) ||
        min_samples_leaf < 1 || l2 < 0.0 || max_bins < 2 || max_bins > 256 ||
        !(validation_fraction >= 0.0 && validation_fraction < 1.0) || patience < 1)
      throw std::invalid_argument("TreeParams: invalid hyperparameters");
  }
};

inline void to_json(nlohmann::json& j, const TreeParams& p) {
  j = {{"max_depth", p.max_depth}, {"rounds", p.rounds}, {"learning_rate", p.learning_rate},
       {"subsample", p.subsample}, {"min_samples_leaf", p.min_samples_leaf}, {"l2", p.l2},
       {"max_bins", p.max_bins}, {"validation_fraction", p.validation_fraction}, {"patience", p.patience},
       {"one_se_rule", p.one_se_rule}};
}

inline void from_json(const nlohmann::json& j, TreeParams& p) {
  p.max_depth = j.value("max_depth", p.max_depth);
  p.rounds = j.value("rounds", p.rounds);
  p.learning_rate = j.value("learning_rate", p.learning_rate);
  p.subsample = j.value("subsample", p.subsample);
  p.min_samples_leaf = j.value("min_samples_leaf", p.min_samples_leaf);
  p.l2 = j.value("l2", p.l2);
  p.max_bins = j.value("max_bins", p.max_bins);
  p.validation_fraction = j.value("validation_fraction", p.validation_fraction);
  p.patience = j.value("patience", p.patience);
  p.one_se_rule = j.value("one_se_rule", p.one_se_rule);
  p.validate();
}

/// Quantile-binned copy of a feature matrix (column-major codes).
class BinnedFeatures {
 public:
  BinnedFeatures(const Matrix& X, int max_bins) : rows_(X.rows()), cols_(X.cols()) {
    edges_.resize(cols_);
    codes_.resize(rows_ * cols_);
    std::vector<double> col(rows_);
    for (std::size_t f = 0; f < cols_; ++f) {
      for (std::size_t i = 0; i < rows_; ++i) col[i] = X(i, f);
      std::vector<double> sorted = col;
      std::sort(sorted.begin(), sorted.end());
      std::vector<double> distinct;
      for (double v : sorted)
        if (distinct.empty() || v != distinct.back()) distinct.push_back(v);
      auto& e = edges_[f];
      if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
        for (std::size_t k = 0; k + 1 < distinct.size(); ++k) e.push_back(0.5 * (distinct[k] + distinct[k + 1]));
      } else {
        for (int b = 1; b < max_bins; ++b) {
          const double q = sorted[static_cast<std::size_t>(
              static_cast<double>(b) / max_bins * static_cast<double>(rows_ - 1))];
          auto it = std::upper_bound(distinct.begin(), distinct.end(), q);
          if (it == distinct.end()) break;
          const double edge = 0.5 * (q + *it);
          if (e.empty() || edge > e.back()) e.push_back(edge);
        }
      }
      for (std::size_t i = 0; i < rows_; ++i)
        codes_[f * rows_ + i] =
            static_cast<std::uint8_t>(std::lower_bound(e.begin(), e.end(), col[i]) - e.begin());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t bins(std::size_t f) const { return edges_[f].size() + 1; }
  std::uint8_t code(std::size_t f, std::size_t i) const { return codes_[f * rows_ + i]; }
  /// Rows with code <= k satisfy x <= edge(f, k).
  double edge(std::size_t f, std::size_t k) const { return edges_[f][k]; }

 private:
  std::size_t rows_, cols_;
  std::vector<std::vector<double>> edges_;
  std::vector<std::uint8_t> codes_;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

class RegressionTree {
 public:
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const { return nodes[static_cast<std::size_t>(leaf(x))].value; }

  int leaf(std::span<const double> x) const {
    int k = 0;
    while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(k)];
      k = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return k;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& n : nodes) arr.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    return arr;
  }

  static RegressionTree from_json(const nlohmann::json& j) {
    RegressionTree t;
    for (const auto& n : j)
      t.nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(),
                         n.at(3).get<int>(), n.at(4).get<double>()});
    return t;
  }
};

/// Depth-wise histogram tree growth on (gradient, hessian) pairs. Leaf values
/// are Newton steps -G / (H + l2); `leaf_of` receives the leaf index of every
/// row in `rows` so callers may overwrite leaf values (quantile renewal).
inline RegressionTree grow_tree(const BinnedFeatures& data, std::span<const std::size_t> rows,
                                std::span<const double> grad, std::span<const double> hess,
                                const TreeParams& params, std::vector<int>* leaf_of = nullptr) {
  RegressionTree tree;
  struct Pending {
    int node;
    int depth;
    std::vector<std::size_t> idx;
  };
  auto leaf_value = [&](const std::vector<std::size_t>& idx) {
    double g = 0.0, h = 0.0;
    for (auto i : idx) {
      g += grad[i];
      h += hess[i];
    }
    return -g / (h + params.l2 + 1e-300);
  };

  std::vector<Pending> frontier;
  tree.nodes.push_back({});
  frontier.push_back({0, 0, std::vector<std::size_t>(rows.begin(), rows.end())});
  if (leaf_of) leaf_of->assign(data.rows(), -1);

  struct Bin {
    double g = 0.0, h = 0.0;
    std::size_t n = 0;
  };
  std::vector<Bin> hist;

  while (!frontier.empty()) {
    Pending cur = std::move(frontier.back());
    frontier.pop_back();
    const auto& idx = cur.idx;

    double G = 0.0, H = 0.0;
    for (auto i : idx) {
      G += grad[i];
      H += hess[i];
    }
    const double parent_score = G * G / (H + params.l2);
    double best_gain = 1e-12;
    int best_f = -1;
    std::size_t best_k = 0;

    if (cur.depth < params.max_depth && idx.size() >= 2 * params.min_samples_leaf) {
      for (std::size_t f = 0; f < data.cols(); ++f) {
        const std::size_t nb = data.bins(f);
        if (nb < 2) continue;
        hist.assign(nb, Bin{});
        for (auto i : idx) {
          auto& b = hist[data.code(f, i)];
          b.g += grad[i];
          b.h += hess[i];
          ++b.n;
        }
        double gl = 0.0, hl = 0.0;
        std::size_t nl = 0;
        for (std::size_t k = 0; k + 1 < nb; ++k) {
          gl += hist[k].g;
          hl += hist[k].h;
          nl += hist[k].n;
          if (hist[k].n == 0) continue;
          const std::size_t nr = idx.size() - nl;
          if (nl < params.min_samples_leaf) continue;
          if (nr < params.min_samples_leaf) break;
          const double gr = G - gl, hr = H - hl;
          const double gain = gl * gl / (hl + params.l2) + gr * gr / (hr + params.l2) - parent_score;
          if (gain > best_gain) {
            best_gain = gain;
            best_f = static_cast<int>(f);
            best_k = k;
          }
        }
      }
    }

    if (best_f < 0) {
      tree.nodes[static_cast<std::size_t>(cur.node)].value = leaf_value(idx);
      if (leaf_of)
        for (auto i : idx) (*leaf_of)[i] = cur.node;
      continue;
    }

    std::vector<std::size_t> left, right;
    left.reserve(idx.size());
    right.reserve(idx.size());
    const auto bf = static_cast<std::size_t>(best_f);
    for (auto i : idx) (data.code(bf, i) <= best_k ? left : right).push_back(i);

    const int l = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    const int r = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    auto& node = tree.nodes[static_cast<std::size_t>(cur.node)];
    node.feature = best_f;
    node.threshold = data.edge(bf, best_k);
    node.left = l;
    node.right = r;
    frontier.push_back({r, cur.depth + 1, std::move(right)});
    frontier.push_back({l, cur.depth + 1, std::move(left)});
  }
  return tree;
}

/// Deterministic (train, validation) row split.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(std::size_t n, double fraction,
                                                                                   std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto nv = std::clamp<std::size_t>(static_cast<std::size_t>(fraction * static_cast<double>(n)), 1, n - 1);
  std::vector<std::size_t> va(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nv));
  std::vector<std::size_t> tr(idx.begin() + static_cast<std::ptrdiff_t>(nv), idx.end());
  std::sort(tr.begin(), tr.end());
  std::sort(va.begin(), va.end());
  return {std::move(tr), std::move(va)};
}

inline Matrix take_rows(const Matrix& X, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), X.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) std::copy(X.row(rows[k]).begin(), X.row(rows[k]).end(), out.row(k).begin());
  return out;
}

template <class T>
std::vector<T> take(std::span<const T> v, std::span<const std::size_t> rows) {
  std::vector<T> out(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) out[k] = v[rows[k]];
  return out;
}

/// Type-7 (linear interpolation) sample quantile; reorders `v`.
inline double sample_quantile(std::vector<double>& v, double alpha) {
  if (v.empty()) throw std::invalid_argument("sample_quantile: empty sample");
  const double pos = alpha * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
  const double a = v[lo];
  if (lo + 1 >= v.size()) return a;
  const double b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
  return a + (pos - static_cast<double>(lo)) * (b - a);
}

/// Type-6 sample quantile (position alpha (n + 1)); its expected coverage is
/// alpha even for small samples, so it is used for leaf renewal. Reorders `v`.
inline double sample_quantile_unbiased(std::vector<double>& v, double alpha) {
  if (v.empty()) throw std::invalid_argument("sample_quantile_unbiased: empty sample");
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  const double h = std::clamp(alpha * (n + 1.0), 1.0, n);
  const auto k = static_cast<std::size_t>(std::floor(h));
  if (k >= v.size()) return v.back();
  return v[k - 1] + (h - static_cast<double>(k)) * (v[k] - v[k - 1]);
}

}  // namespace lf2i::learners

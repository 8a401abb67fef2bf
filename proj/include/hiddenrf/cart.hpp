/*
 * Copyright 2026 The hiddenrf Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Regression trees grown by greedy variance reduction.
//
// Nodes are processed first-in-first-out, so the node array is in
// breadth-first order and a node's position (plus one) is the index of the
// operation that split or terminated it. Children of a split are stored next
// to each other: right == left + 1.

#ifndef HIDDENRF_CART_HPP_
#define HIDDENRF_CART_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hiddenrf/common.hpp"
#include "hiddenrf/dataset.hpp"

namespace hiddenrf::cart {

struct TreeParams {
  std::size_t mtry = 1;
  std::size_t min_node_distinct = 5;
  std::optional<std::size_t> max_nodes;
  std::uint64_t seed = 0;

  void validate(std::size_t d) const {
    if (mtry < 1 || mtry > d)
      throw ConfigError("mtry must lie in [1, " + std::to_string(d) + "], got " +
                        std::to_string(mtry));
    if (min_node_distinct < 2) throw ConfigError("min_node_distinct must be >= 2");
    if (max_nodes && *max_nodes < 1) throw ConfigError("max_nodes must be >= 1");
  }
};

struct Node {
  double value = 0.0;         // threshold for a split, mean response for a leaf
  std::int32_t feature = -1;  // -1 for a leaf
  std::int32_t left = -1;     // right child is left + 1

  bool is_leaf() const noexcept { return feature < 0; }
  double threshold() const noexcept { return value; }
  double mean() const noexcept { return value; }
  std::int32_t right() const noexcept { return left + 1; }
};

class RegressionTree {
 public:
  RegressionTree() = default;
  /// `rows[i]` is the number of training rows (with multiplicity) that
  /// reached node i.
  RegressionTree(std::vector<Node> nodes, std::vector<std::uint32_t> rows, std::size_t n_features)
      : nodes_(std::move(nodes)), rows_(std::move(rows)), n_features_(n_features) {
    if (nodes_.empty() || rows_.size() != nodes_.size())
      throw DomainError("tree needs one row count per node");
  }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<std::uint32_t>& node_rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t n_features() const noexcept { return n_features_; }
  static constexpr std::size_t operation_index(std::size_t node) noexcept { return node + 1; }

  /// Leaf reached by x; no input validation.
  std::size_t leaf_index(std::span<const double> x) const noexcept {
    std::size_t i = 0;
    while (!nodes_[i].is_leaf()) {
      const Node& n = nodes_[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.value ? n.left
                                                                                       : n.left + 1);
    }
    return i;
  }

  double predict_unchecked(std::span<const double> x) const noexcept {
    return nodes_[leaf_index(x)].value;
  }

  double predict(std::span<const double> x) const {
    if (x.size() != n_features_) throw DomainError("feature vector has wrong dimension");
    for (double v : x)
      if (!std::isfinite(v)) throw DomainError("non-finite feature value");
    return predict_unchecked(x);
  }

  bool operator==(const RegressionTree& o) const {
    if (n_features_ != o.n_features_ || nodes_.size() != o.nodes_.size() || rows_ != o.rows_)
      return false;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& a = nodes_[i];
      const Node& b = o.nodes_[i];
      if (a.value != b.value || a.feature != b.feature || a.left != b.left) return false;
    }
    return true;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> rows_;
  std::size_t n_features_ = 0;
};

struct SplitCandidate {
  std::size_t feature = 0;
  double threshold = 0.0;
  double gain = 0.0;  // reduction in the weighted sum of squared errors
};

namespace detail {

inline constexpr double kRelativeGainTol = 1e-12;

struct NodeMoments {
  double weight = 0.0;
  double sum = 0.0;
  double sum_sq = 0.0;  // uncentered; scales the gain tolerance
};

// Midpoint of two consecutive distinct values, kept inside [lo, hi).
inline double midpoint(double lo, double hi) noexcept {
  const double m = lo + 0.5 * (hi - lo);
  return (m >= hi || m < lo) ? lo : m;
}

// Scans one feature whose node rows are visited in ascending value order via
// at(k) -> {x, y, w}. Updates `best` when a threshold beats it by more than
// the tolerance; equal gains keep the earlier (lower feature, smaller
// threshold) candidate.
template <class At>
void scan_feature(std::size_t feature, std::size_t count, const NodeMoments& node, At&& at,
                  std::optional<SplitCandidate>& best) {
  const double tol = kRelativeGainTol * node.sum_sq;
  double w_left = 0.0;
  double s_left = 0.0;
  auto cur = at(0);
  for (std::size_t k = 0; k + 1 < count; ++k) {
    w_left += cur.w;
    s_left += cur.w * cur.y;
    const auto next = at(k + 1);
    if (cur.x < next.x) {
      const double w_right = node.weight - w_left;
      const double diff = s_left / w_left - (node.sum - s_left) / w_right;
      const double gain = w_left * w_right / node.weight * diff * diff;
      const double bar = best ? best->gain + tol : tol;
      if (gain > bar) best = SplitCandidate{feature, midpoint(cur.x, next.x), gain};
    }
    cur = next;
  }
}

struct Obs {
  double x;
  double y;
  double w;
};

}  // namespace detail

/// Best variance-reduction split of `rows` over `candidate_features`
/// (thresholds at midpoints of consecutive distinct values; rows may repeat).
/// Empty when no split has strictly positive gain.
inline std::optional<SplitCandidate> best_split(const Dataset& data,
                                                std::span<const std::size_t> rows,
                                                std::span<const std::size_t> candidate_features) {
  if (rows.empty()) throw DomainError("best_split needs a non-empty row set");
  detail::NodeMoments node;
  for (std::size_t r : rows) {
    const double y = data.response()[r];
    node.weight += 1.0;
    node.sum += y;
    node.sum_sq += y * y;
  }
  std::vector<std::size_t> features(candidate_features.begin(), candidate_features.end());
  std::sort(features.begin(), features.end());
  std::optional<SplitCandidate> best;
  std::vector<detail::Obs> obs(rows.size());
  for (std::size_t f : features) {
    for (std::size_t k = 0; k < rows.size(); ++k)
      obs[k] = {data.at(rows[k], f), data.response()[rows[k]], 1.0};
    std::stable_sort(obs.begin(), obs.end(),
                     [](const detail::Obs& a, const detail::Obs& b) { return a.x < b.x; });
    detail::scan_feature(f, obs.size(), node, [&](std::size_t k) { return obs[k]; }, best);
  }
  return best;
}

/// Per-feature row orderings of a dataset plus duplicate-row grouping,
/// computed once and shared by every tree grown on it.
class PresortedData {
 public:
  explicit PresortedData(const Dataset& data) : data_(&data) {
    const std::size_t n = data.rows();
    const std::size_t d = data.cols();
    columns_.resize(d);
    order_.resize(d);
    for (std::size_t f = 0; f < d; ++f) {
      columns_[f] = data.column(f);
      auto& ord = order_[f];
      ord.resize(n);
      std::iota(ord.begin(), ord.end(), 0U);
      const auto& col = columns_[f];
      std::stable_sort(ord.begin(), ord.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
    }
    // Group identical feature vectors; "distinct observations" counts groups.
    std::vector<std::uint32_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0U);
    auto lex_less = [&](std::uint32_t a, std::uint32_t b) {
      const auto ra = data.row(a);
      const auto rb = data.row(b);
      return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    };
    std::sort(rows.begin(), rows.end(), lex_less);
    group_.assign(n, 0);
    std::uint32_t g = 0;
    bool duplicates = false;
    for (std::size_t k = 0; k < n; ++k) {
      if (k > 0) {
        if (lex_less(rows[k - 1], rows[k]))
          ++g;
        else
          duplicates = true;
      }
      group_[rows[k]] = g;
    }
    n_groups_ = n == 0 ? 0 : g + 1;
    if (!duplicates) group_.clear();
  }

  const Dataset& data() const noexcept { return *data_; }
  const std::vector<double>& column(std::size_t f) const { return columns_[f]; }
  const std::vector<std::uint32_t>& order(std::size_t f) const { return order_[f]; }
  bool has_duplicate_rows() const noexcept { return !group_.empty(); }
  std::uint32_t group(std::size_t row) const { return group_.empty() ? row : group_[row]; }
  std::size_t n_groups() const noexcept { return n_groups_; }

 private:
  const Dataset* data_;
  std::vector<std::vector<double>> columns_;
  std::vector<std::vector<std::uint32_t>> order_;
  std::vector<std::uint32_t> group_;
  std::size_t n_groups_ = 0;
};

/// Grows a tree on the rows of `pre` with multiplicities `counts` (0 = row
/// not in the sample).
inline RegressionTree fit_tree_weighted(const PresortedData& pre,
                                        std::span<const std::uint32_t> counts,
                                        const TreeParams& params, Rng& rng) {
  const Dataset& data = pre.data();
  const std::size_t d = data.cols();
  params.validate(d);
  const auto y = data.response();

  // Sampled rows get compact ids s in [0, m). For each feature the entries
  // (value, s) are kept sorted by value within every node's [begin, end)
  // window; a split stably partitions every feature's window.
  struct Entry {
    double x;
    std::uint32_t s;
  };
  struct Target {
    double y;
    double w;
  };
  std::vector<std::uint32_t> compact(data.rows(), 0);
  std::vector<Target> target;
  std::vector<std::uint32_t> group;
  for (std::size_t r = 0; r < data.rows(); ++r) {
    if (counts[r] == 0) continue;
    compact[r] = static_cast<std::uint32_t>(target.size());
    target.push_back({y[r], static_cast<double>(counts[r])});
    if (pre.has_duplicate_rows()) group.push_back(pre.group(r));
  }
  const std::size_t m = target.size();
  if (m == 0) throw DomainError("cannot grow a tree on an empty sample");
  std::vector<Entry> entries(d * m);
  for (std::size_t f = 0; f < d; ++f) {
    Entry* out = entries.data() + f * m;
    const auto& col = pre.column(f);
    for (std::uint32_t r : pre.order(f))
      if (counts[r] > 0) *out++ = {col[r], compact[r]};
  }

  std::vector<Node> nodes(1);
  std::vector<std::uint32_t> node_rows(1, 0);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> ranges;
  ranges.emplace_back(0U, static_cast<std::uint32_t>(m));

  std::vector<std::size_t> features(d);
  std::iota(features.begin(), features.end(), std::size_t{0});
  std::vector<std::uint8_t> goes_left(m, 0);
  std::vector<Entry> left_buf(m + 1);
  std::vector<Entry> right_buf(m + 1);
  std::vector<std::uint32_t> stamp(pre.has_duplicate_rows() ? pre.n_groups() : 0, 0);
  std::uint32_t stamp_id = 0;

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto [begin, end] = ranges[i];
    const Entry* node0 = entries.data() + begin;
    const std::size_t count = end - begin;

    detail::NodeMoments moments;
    for (std::size_t k = 0; k < count; ++k) {
      const Target& t = target[node0[k].s];
      moments.weight += t.w;
      moments.sum += t.w * t.y;
      moments.sum_sq += t.w * t.y * t.y;
    }
    node_rows[i] = static_cast<std::uint32_t>(moments.weight);

    std::size_t distinct = count;
    if (pre.has_duplicate_rows()) {
      ++stamp_id;
      distinct = 0;
      for (std::size_t k = 0; k < count && distinct < params.min_node_distinct; ++k) {
        const std::uint32_t g = group[node0[k].s];
        if (stamp[g] != stamp_id) {
          stamp[g] = stamp_id;
          ++distinct;
        }
      }
    }

    std::optional<SplitCandidate> best;
    const bool room = !params.max_nodes || nodes.size() + 2 <= *params.max_nodes;
    if (distinct >= params.min_node_distinct && room) {
      if (params.mtry < d) {
        for (std::size_t k = 0; k < params.mtry; ++k) {
          std::uniform_int_distribution<std::size_t> pick(k, d - 1);
          std::swap(features[k], features[pick(rng)]);
        }
        std::sort(features.begin(), features.begin() + static_cast<std::ptrdiff_t>(params.mtry));
      }
      for (std::size_t k = 0; k < params.mtry; ++k) {
        const std::size_t f = features[k];
        const Entry* node_f = entries.data() + f * m + begin;
        detail::scan_feature(
            f, count, moments,
            [&](std::size_t j) {
              const Entry& e = node_f[j];
              const Target& t = target[e.s];
              return detail::Obs{e.x, t.y, t.w};
            },
            best);
      }
      if (params.mtry < d) std::sort(features.begin(), features.end());
    }

    if (!best) {
      nodes[i].feature = -1;
      nodes[i].value = moments.sum / moments.weight;
      continue;
    }

    // The split feature's window is sorted, so its left part is a prefix.
    const Entry* split_f = entries.data() + best->feature * m + begin;
    std::uint32_t n_left = 0;
    for (std::size_t k = 0; k < count; ++k) {
      const bool left = split_f[k].x <= best->threshold;
      goes_left[split_f[k].s] = left ? 1 : 0;
      n_left += left ? 1 : 0;
    }
    for (std::size_t f = 0; f < d; ++f) {
      if (f == best->feature) continue;
      Entry* node_f = entries.data() + f * m + begin;
      std::size_t l = 0;
      std::size_t r = 0;
      for (std::size_t k = 0; k < count; ++k) {
        // Branch-free: the side is unpredictable.
        const Entry e = node_f[k];
        const std::size_t g = goes_left[e.s];
        left_buf[l] = e;
        right_buf[r] = e;
        l += g;
        r += 1 - g;
      }
      std::copy(left_buf.begin(), left_buf.begin() + static_cast<std::ptrdiff_t>(l), node_f);
      std::copy(right_buf.begin(), right_buf.begin() + static_cast<std::ptrdiff_t>(r), node_f + l);
    }

    const auto left = static_cast<std::int32_t>(nodes.size());
    nodes[i].feature = static_cast<std::int32_t>(best->feature);
    nodes[i].value = best->threshold;
    nodes[i].left = left;
    nodes.resize(nodes.size() + 2);
    node_rows.resize(node_rows.size() + 2, 0);
    ranges.emplace_back(begin, begin + n_left);
    ranges.emplace_back(begin + n_left, end);
  }
  return RegressionTree(std::move(nodes), std::move(node_rows), d);
}

/// Grows a tree on every row of `data` once; rows are not resampled here.
inline RegressionTree fit_tree(const Dataset& data, const TreeParams& params, Rng& rng) {
  if (data.empty()) throw DomainError("fit_tree needs a non-empty dataset");
  const PresortedData pre(data);
  const std::vector<std::uint32_t> counts(data.rows(), 1U);
  return fit_tree_weighted(pre, counts, params, rng);
}

inline RegressionTree fit_tree(const Dataset& data, const TreeParams& params) {
  Rng rng(params.seed);
  return fit_tree(data, params, rng);
}

struct SplitRecord {
  std::size_t operation = 0;
  std::size_t feature = 0;
};

struct LeafRecord {
  std::size_t operation = 0;
  std::uint32_t rows = 0;
  std::vector<std::size_t> involved;  // features on the root-to-leaf path, ascending
};

struct TreeStructure {
  std::size_t operations = 0;  // nodes processed (split or terminated)
  std::vector<SplitRecord> splits;
  std::vector<LeafRecord> leaves;
};

inline TreeStructure tree_structure_report(const RegressionTree& tree) {
  const auto& nodes = tree.nodes();
  TreeStructure report;
  report.operations = nodes.size();
  std::vector<std::int32_t> parent(nodes.size(), -1);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    if (n.is_leaf()) continue;
    report.splits.push_back({RegressionTree::operation_index(i),
                             static_cast<std::size_t>(n.feature)});
    parent[static_cast<std::size_t>(n.left)] = static_cast<std::int32_t>(i);
    parent[static_cast<std::size_t>(n.left + 1)] = static_cast<std::int32_t>(i);
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!nodes[i].is_leaf()) continue;
    LeafRecord leaf{RegressionTree::operation_index(i), tree.node_rows()[i], {}};
    for (std::int32_t p = parent[i]; p >= 0; p = parent[static_cast<std::size_t>(p)])
      leaf.involved.push_back(static_cast<std::size_t>(nodes[static_cast<std::size_t>(p)].feature));
    std::sort(leaf.involved.begin(), leaf.involved.end());
    leaf.involved.erase(std::unique(leaf.involved.begin(), leaf.involved.end()),
                        leaf.involved.end());
    report.leaves.push_back(std::move(leaf));
  }
  return report;
}

}  // namespace hiddenrf::cart

#endif  // HIDDENRF_CART_HPP_

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

#ifndef HIDDENRF_FOREST_HPP_
#define HIDDENRF_FOREST_HPP_

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hiddenrf/cart.hpp"
#include "hiddenrf/common.hpp"
#include "hiddenrf/dataset.hpp"

namespace hiddenrf {

/// Piecewise-constant function of one coordinate: values[k] applies to v
/// with exactly k thresholds strictly below v (v <= t goes left).
struct StepFunction {
  std::vector<double> thresholds;
  std::vector<double> values;

  double operator()(double v) const {
    const auto k = std::lower_bound(thresholds.begin(), thresholds.end(), v) - thresholds.begin();
    return values[static_cast<std::size_t>(k)];
  }
};

}  // namespace hiddenrf

namespace hiddenrf::forest {

enum class ResampleKind { kBootstrap, kSubsample };

struct Resample {
  ResampleKind kind = ResampleKind::kBootstrap;
  double fraction = 1.0;  // subsample only

  static Resample bootstrap() { return {}; }
  static Resample subsample(double fraction) { return {ResampleKind::kSubsample, fraction}; }
};

struct ForestParams {
  std::size_t n_trees = 1000;
  std::optional<std::size_t> mtry;  // default floor(d/3), at least 1
  std::size_t min_node_distinct = 5;
  std::optional<std::size_t> max_nodes;
  Resample resample;
  std::uint64_t seed = 0;

  std::size_t resolved_mtry(std::size_t d) const {
    return mtry.value_or(std::max<std::size_t>(1, d / 3));
  }

  cart::TreeParams tree_params(std::size_t d, std::uint64_t tree_seed) const {
    return {resolved_mtry(d), min_node_distinct, max_nodes, tree_seed};
  }

  void validate(std::size_t d) const {
    if (n_trees < 1) throw ConfigError("n_trees must be >= 1");
    if (resample.kind == ResampleKind::kSubsample &&
        !(resample.fraction > 0.0 && resample.fraction <= 1.0))
      throw ConfigError("subsample fraction must lie in (0, 1]");
    tree_params(d, 0).validate(d);
  }
};

/// Row indices drawn for one tree.
inline std::vector<std::size_t> draw_resample(std::size_t n, const Resample& resample, Rng& rng) {
  std::vector<std::size_t> rows;
  if (resample.kind == ResampleKind::kBootstrap) {
    rows.resize(n);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (auto& r : rows) r = pick(rng);
  } else {
    const auto size = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(resample.fraction * static_cast<double>(n))), 1, n);
    rows.resize(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    for (std::size_t k = 0; k < size; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, n - 1);
      std::swap(rows[k], rows[pick(rng)]);
    }
    rows.resize(size);
    std::sort(rows.begin(), rows.end());
  }
  return rows;
}

class Forest {
 public:
  Forest() = default;

  Forest(std::vector<cart::RegressionTree> trees, ForestParams params, std::size_t n_features,
         std::size_t n_train)
      : trees_(std::move(trees)), params_(params), n_features_(n_features), n_train_(n_train) {
    if (trees_.empty()) throw DomainError("a forest needs at least one tree");
    double max_abs = 0.0;
    for (const auto& t : trees_)
      for (const auto& node : t.nodes())
        if (node.is_leaf()) max_abs = std::max(max_abs, std::fabs(node.mean()));
    accumulator_ = FixedSum(FixedSum::scale_for(max_abs, trees_.size()));
  }

  /// One-leaf forest predicting `mean` everywhere.
  static Forest constant(double mean, std::size_t n_features, std::size_t n_rows,
                         const ForestParams& params) {
    cart::Node leaf;
    leaf.value = mean;
    ForestParams p = params;
    p.n_trees = 1;
    return Forest({cart::RegressionTree({leaf}, {static_cast<std::uint32_t>(n_rows)}, n_features)},
                  p, n_features, n_rows);
  }

  const std::vector<cart::RegressionTree>& trees() const noexcept { return trees_; }
  const ForestParams& params() const noexcept { return params_; }
  std::size_t n_features() const noexcept { return n_features_; }
  std::size_t n_train() const noexcept { return n_train_; }

  /// Rows tree `t` was grown on, regenerated from its derived seed.
  std::vector<std::size_t> resample_indices(std::size_t t) const {
    Rng rng(derive_seed(params_.seed, t));
    return draw_resample(n_train_, params_.resample, rng);
  }

  double predict(std::span<const double> x) const {
    check_input(x);
    return predict_unchecked(x);
  }

  double predict_unchecked(std::span<const double> x) const {
    FixedSum::Int total = 0;
    for (const auto& t : trees_) total += accumulator_.to_fixed(t.predict_unchecked(x));
    return finish(total);
  }

  std::vector<double> predict_rows(const Dataset& data, unsigned threads = 1) const {
    if (data.cols() != n_features_) throw DomainError("dataset has wrong number of features");
    std::vector<double> out(data.rows());
    constexpr std::size_t kBlock = 256;
    const std::size_t blocks = (data.rows() + kBlock - 1) / kBlock;
    parallel_for(blocks, threads, [&](std::size_t b) {
      const std::size_t begin = b * kBlock;
      const std::size_t end = std::min(data.rows(), begin + kBlock);
      FixedSum::Int totals[kBlock] = {};
      std::size_t at[kBlock];
      const double* rows = data.features().data();
      const std::size_t d = n_features_;
      // Tree-major order keeps one tree hot in cache; the rows of a block
      // descend in lockstep so their loads overlap.
      for (const auto& t : trees_) {
        const cart::Node* nodes = t.nodes().data();
        const std::size_t count = end - begin;
        std::fill(at, at + count, std::size_t{0});
        bool moving = true;
        while (moving) {
          moving = false;
          for (std::size_t k = 0; k < count; ++k) {
            const cart::Node& n = nodes[at[k]];
            if (n.feature < 0) continue;
            moving = true;
            const double v = rows[(begin + k) * d + static_cast<std::size_t>(n.feature)];
            at[k] = static_cast<std::size_t>(n.left + (v <= n.value ? 0 : 1));
          }
        }
        for (std::size_t k = 0; k < count; ++k)
          totals[k] += accumulator_.to_fixed(nodes[at[k]].value);
      }
      for (std::size_t i = begin; i < end; ++i) out[i] = finish(totals[i - begin]);
    });
    return out;
  }

  /// Prediction as a function of coordinate j with the rest of x held fixed.
  /// Evaluating it at x[j] reproduces predict(x) bit for bit.
  StepFunction column_profile(std::span<const double> x, std::size_t j) const {
    ProfileScratch scratch;
    ProfileAccumulator acc;
    for (const auto& tree : trees_) add_tree_profile(tree, x, j, acc, scratch);
    return assemble(acc);
  }

  /// column_profile for every row of `data`, walking the forest tree by tree.
  std::vector<StepFunction> column_profiles(const Dataset& data, std::size_t j,
                                            unsigned threads = 1) const {
    if (data.cols() != n_features_) throw DomainError("dataset has wrong number of features");
    if (j >= n_features_) throw DomainError("column index out of range");
    std::vector<StepFunction> out(data.rows());
    constexpr std::size_t kBlock = 64;
    const std::size_t blocks = (data.rows() + kBlock - 1) / kBlock;
    parallel_for(blocks, threads, [&](std::size_t b) {
      const std::size_t begin = b * kBlock;
      const std::size_t end = std::min(data.rows(), begin + kBlock);
      std::vector<ProfileAccumulator> accs(end - begin);
      ProfileScratch scratch;
      for (const auto& tree : trees_)
        for (std::size_t i = begin; i < end; ++i)
          add_tree_profile(tree, data.row(i), j, accs[i - begin], scratch);
      for (std::size_t i = begin; i < end; ++i) out[i] = assemble(accs[i - begin]);
    });
    return out;
  }

 private:
  struct ProfileEvent {
    double at;
    FixedSum::Int delta;
  };
  struct ProfileAccumulator {
    FixedSum::Int base = 0;
    std::vector<ProfileEvent> events;
  };
  struct PendingNode {
    std::int32_t node;
    double lo;
    double hi;
  };
  struct ProfileScratch {
    std::vector<PendingNode> stack;
    std::vector<std::pair<double, double>> pieces;  // (upper bound, leaf value) in order
  };

  void add_tree_profile(const cart::RegressionTree& tree, std::span<const double> x,
                        std::size_t j, ProfileAccumulator& acc, ProfileScratch& s) const {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const auto feature = static_cast<std::int32_t>(j);
    const auto& nodes = tree.nodes();
    s.pieces.clear();
    s.stack.assign(1, {0, -inf, inf});
    while (!s.stack.empty()) {
      const PendingNode p = s.stack.back();
      s.stack.pop_back();
      const cart::Node& n = nodes[static_cast<std::size_t>(p.node)];
      if (n.is_leaf()) {
        s.pieces.emplace_back(p.hi, n.mean());
      } else if (n.feature != feature) {
        const double v = x[static_cast<std::size_t>(n.feature)];
        s.stack.push_back({v <= n.value ? n.left : n.left + 1, p.lo, p.hi});
      } else {
        // Right first so the left interval is visited first.
        if (p.hi > n.value) s.stack.push_back({n.left + 1, std::max(p.lo, n.value), p.hi});
        if (p.lo < n.value) s.stack.push_back({n.left, p.lo, std::min(p.hi, n.value)});
      }
    }
    FixedSum::Int prev = accumulator_.to_fixed(s.pieces.front().second);
    acc.base += prev;
    for (std::size_t k = 1; k < s.pieces.size(); ++k) {
      const FixedSum::Int cur = accumulator_.to_fixed(s.pieces[k].second);
      if (cur != prev) acc.events.push_back({s.pieces[k - 1].first, cur - prev});
      prev = cur;
    }
  }

  StepFunction assemble(ProfileAccumulator& acc) const {
    auto& events = acc.events;
    std::sort(events.begin(), events.end(),
              [](const ProfileEvent& a, const ProfileEvent& b) { return a.at < b.at; });
    StepFunction f;
    FixedSum::Int running = acc.base;
    f.values.push_back(finish(running));
    for (std::size_t k = 0; k < events.size();) {
      const double at = events[k].at;
      for (; k < events.size() && events[k].at == at; ++k) running += events[k].delta;
      f.thresholds.push_back(at);
      f.values.push_back(finish(running));
    }
    return f;
  }

  double finish(FixedSum::Int total) const {
    return accumulator_.to_double_mean(total, trees_.size());
  }

  void check_input(std::span<const double> x) const {
    if (x.size() != n_features_) throw DomainError("feature vector has wrong dimension");
    for (double v : x)
      if (!std::isfinite(v)) throw DomainError("non-finite feature value");
  }

  std::vector<cart::RegressionTree> trees_;
  ForestParams params_;
  std::size_t n_features_ = 0;
  std::size_t n_train_ = 0;
  FixedSum accumulator_;
};

/// Grows params.n_trees trees; tree t uses the stream derive_seed(seed, t)
/// for both its resample and its feature draws, so the result does not
/// depend on `threads`.
inline Forest fit_forest(const Dataset& data, const ForestParams& params, unsigned threads = 1) {
  if (data.empty()) throw DomainError("fit_forest needs a non-empty dataset");
  params.validate(data.cols());
  const cart::PresortedData pre(data);
  std::vector<cart::RegressionTree> trees(params.n_trees);
  parallel_for(params.n_trees, threads, [&](std::size_t t) {
    const std::uint64_t tree_seed = derive_seed(params.seed, t);
    Rng rng(tree_seed);
    const auto rows = draw_resample(data.rows(), params.resample, rng);
    std::vector<std::uint32_t> counts(data.rows(), 0);
    for (std::size_t r : rows) ++counts[r];
    trees[t] = cart::fit_tree_weighted(pre, counts, params.tree_params(data.cols(), tree_seed), rng);
  });
  return Forest(std::move(trees), params, data.cols(), data.rows());
}

// ---------------------------------------------------------------------------
// Many-armed forests

/// Deterministic map from a feature vector to an arm label. `name` is the
/// textual spec it was parsed from and is what gets serialized.
struct ArmFunction {
  std::string name;
  std::vector<std::size_t> depends_on;  // 0-based feature indices
  std::function<std::int64_t(std::span<const double>)> label;

  std::int64_t operator()(std::span<const double> x) const { return label(x); }

  static ArmFunction constant() {
    return {"constant", {}, [](std::span<const double>) { return std::int64_t{0}; }};
  }

  /// 1{x_a == x_b} (0-based indices).
  static ArmFunction agreement(std::size_t a, std::size_t b) {
    return {"delta_x" + std::to_string(a + 1) + "_x" + std::to_string(b + 1),
            {a, b},
            [a, b](std::span<const double> x) { return std::int64_t{x[a] == x[b] ? 1 : 0}; }};
  }

  /// One arm per distinct combination of the listed features' values.
  static ArmFunction cells(std::vector<std::size_t> features) {
    std::string name = "cells";
    for (std::size_t f : features) name += "_x" + std::to_string(f + 1);
    auto fs = features;
    return {name, std::move(features), [fs](std::span<const double> x) {
              std::uint64_t h = 0x84222325cbf29ce4ULL;
              for (std::size_t f : fs) h = mix64(h ^ std::bit_cast<std::uint64_t>(x[f] + 0.0));
              return static_cast<std::int64_t>(h >> 1);
            }};
  }

  /// Parses "constant", "delta_x<a>_x<b>" or "cells_x<a>_x<b>..." (1-based)
  /// against a feature count d.
  static ArmFunction parse(const std::string& spec, std::size_t d) {
    if (spec == "constant") return constant();
    auto parse_vars = [&](std::string_view rest) {
      std::vector<std::size_t> vars;
      while (!rest.empty()) {
        if (rest.substr(0, 2) != "_x") throw ConfigError("malformed arm spec '" + spec + "'");
        rest.remove_prefix(2);
        std::size_t len = 0;
        while (len < rest.size() && rest[len] >= '0' && rest[len] <= '9') ++len;
        if (len == 0) throw ConfigError("malformed arm spec '" + spec + "'");
        const auto v = std::stoul(std::string(rest.substr(0, len)));
        if (v < 1 || v > d)
          throw ConfigError("arm spec '" + spec + "' references x" + std::to_string(v) +
                            " but the data has " + std::to_string(d) + " features");
        vars.push_back(v - 1);
        rest.remove_prefix(len);
      }
      return vars;
    };
    const std::string_view s = spec;
    if (s.starts_with("delta")) {
      const auto vars = parse_vars(s.substr(5));
      if (vars.size() != 2 || vars[0] == vars[1])
        throw ConfigError("arm spec '" + spec + "' needs two distinct variables");
      return agreement(vars[0], vars[1]);
    }
    if (s.starts_with("cells")) {
      auto vars = parse_vars(s.substr(5));
      if (vars.empty()) throw ConfigError("arm spec '" + spec + "' lists no variables");
      return cells(std::move(vars));
    }
    throw ConfigError("unknown arm spec '" + spec + "'");
  }
};

struct ArmFitNote {
  std::int64_t label = 0;
  std::size_t rows = 0;
  bool mean_only = false;  // too few rows to grow trees
};

class ArmedForest {
 public:
  ArmedForest() = default;
  ArmedForest(ArmFunction arm, std::map<std::int64_t, Forest> arms, Forest fallback,
              std::vector<ArmFitNote> notes = {})
      : arm_(std::move(arm)),
        arms_(std::move(arms)),
        fallback_(std::move(fallback)),
        notes_(std::move(notes)) {}

  const ArmFunction& arm_function() const noexcept { return arm_; }
  const std::map<std::int64_t, Forest>& arms() const noexcept { return arms_; }
  const Forest& fallback() const noexcept { return fallback_; }
  const std::vector<ArmFitNote>& notes() const noexcept { return notes_; }
  std::size_t n_features() const noexcept { return fallback_.n_features(); }

  const Forest& forest_for(std::span<const double> x) const {
    const auto it = arms_.find(arm_(x));
    return it == arms_.end() ? fallback_ : it->second;
  }

  double predict(std::span<const double> x) const {
    if (x.size() != n_features()) throw DomainError("feature vector has wrong dimension");
    for (double v : x)
      if (!std::isfinite(v)) throw DomainError("non-finite feature value");
    return forest_for(x).predict_unchecked(x);
  }

  std::vector<double> predict_rows(const Dataset& data, unsigned threads = 1) const {
    if (data.cols() != n_features()) throw DomainError("dataset has wrong number of features");
    std::vector<double> out(data.rows());
    for (const auto& [forest, rows] : group_rows(data)) {
      const auto part = forest->predict_rows(data.subset(rows), threads);
      for (std::size_t k = 0; k < rows.size(); ++k) out[rows[k]] = part[k];
    }
    return out;
  }

  /// Available only for coordinates the arm function ignores.
  std::optional<StepFunction> column_profile(std::span<const double> x, std::size_t j) const {
    if (std::find(arm_.depends_on.begin(), arm_.depends_on.end(), j) != arm_.depends_on.end())
      return std::nullopt;
    return forest_for(x).column_profile(x, j);
  }

  std::optional<std::vector<StepFunction>> column_profiles(const Dataset& data, std::size_t j,
                                                           unsigned threads = 1) const {
    if (data.cols() != n_features()) throw DomainError("dataset has wrong number of features");
    if (std::find(arm_.depends_on.begin(), arm_.depends_on.end(), j) != arm_.depends_on.end())
      return std::nullopt;
    std::vector<StepFunction> out(data.rows());
    for (const auto& [forest, rows] : group_rows(data)) {
      auto part = forest->column_profiles(data.subset(rows), j, threads);
      for (std::size_t k = 0; k < rows.size(); ++k) out[rows[k]] = std::move(part[k]);
    }
    return out;
  }

 private:
  std::map<const Forest*, std::vector<std::size_t>> group_rows(const Dataset& data) const {
    std::map<const Forest*, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < data.rows(); ++i) {
      for (double v : data.row(i))
        if (!std::isfinite(v)) throw DomainError("non-finite feature value");
      groups[&forest_for(data.row(i))].push_back(i);
    }
    return groups;
  }

  ArmFunction arm_;
  std::map<std::int64_t, Forest> arms_;
  Forest fallback_;
  std::vector<ArmFitNote> notes_;
};

inline std::uint64_t arm_seed(std::uint64_t master, std::int64_t label) {
  return derive_seed(master, "arm:" + std::to_string(label));
}

inline std::uint64_t fallback_seed(std::uint64_t master) {
  return derive_seed(master, std::string_view("fallback"));
}

/// One forest per arm label seen in `data` plus a fallback grown on all rows
/// (with `fallback_trees` trees when given, else params.n_trees).
inline ArmedForest fit_armed_forest(const Dataset& data, const ArmFunction& arm,
                                    const ForestParams& params, unsigned threads = 1,
                                    std::optional<std::size_t> fallback_trees = std::nullopt) {
  if (data.empty()) throw DomainError("fit_armed_forest needs a non-empty dataset");
  params.validate(data.cols());
  std::map<std::int64_t, std::vector<std::size_t>> partition;
  for (std::size_t i = 0; i < data.rows(); ++i) partition[arm(data.row(i))].push_back(i);

  std::map<std::int64_t, Forest> arms;
  std::vector<ArmFitNote> notes;
  for (const auto& [label, rows] : partition) {
    ForestParams p = params;
    p.seed = arm_seed(params.seed, label);
    const Dataset part = data.subset(rows);
    ArmFitNote note{label, rows.size(), rows.size() < params.min_node_distinct};
    if (note.mean_only) {
      const auto y = part.response();
      const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
      arms.emplace(label, Forest::constant(mean, data.cols(), rows.size(), p));
    } else {
      arms.emplace(label, fit_forest(part, p, threads));
    }
    notes.push_back(note);
  }
  ForestParams fb = params;
  fb.seed = fallback_seed(params.seed);
  if (fallback_trees) {
    if (*fallback_trees < 1) throw ConfigError("fallback_trees must be >= 1");
    fb.n_trees = *fallback_trees;
  }
  Forest fallback = fit_forest(data, fb, threads);
  return ArmedForest(arm, std::move(arms), std::move(fallback), std::move(notes));
}

}  // namespace hiddenrf::forest

#endif  // HIDDENRF_FOREST_HPP_

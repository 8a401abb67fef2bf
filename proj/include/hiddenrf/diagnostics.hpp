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

// Accuracy metrics, permutation importance and variable-usage statistics.
//
// Permutation importance of variable j for a predictor P:
//
//   I_j = 100 * (mean loss with column j permuted - e) / e,
//
// where e is the loss on the untouched test set. For each test row the
// predictor is reduced to a function of x_j alone (an exact step function
// for forests, a lookup table for columns with few distinct values, or a
// direct call otherwise), so each permutation costs one lookup per row.

#ifndef HIDDENRF_DIAGNOSTICS_HPP_
#define HIDDENRF_DIAGNOSTICS_HPP_

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hiddenrf/cart.hpp"
#include "hiddenrf/common.hpp"
#include "hiddenrf/dataset.hpp"
#include "hiddenrf/forest.hpp"

namespace hiddenrf::diagnostics {

template <class P>
concept Predictor = requires(const P& p, std::span<const double> x) {
  { p.predict(x) } -> std::convertible_to<double>;
};

template <class P>
concept BatchPredictor = Predictor<P> && requires(const P& p, const Dataset& d, unsigned t) {
  { p.predict_rows(d, t) } -> std::convertible_to<std::vector<double>>;
};

template <class P>
concept ExactProfiler = requires(const P& p, std::span<const double> x, std::size_t j) {
  { p.column_profile(x, j) } -> std::same_as<StepFunction>;
};

template <class P>
concept PartialProfiler = requires(const P& p, std::span<const double> x, std::size_t j) {
  { p.column_profile(x, j) } -> std::same_as<std::optional<StepFunction>>;
};

template <class P>
concept BatchProfiler = requires(const P& p, const Dataset& d, std::size_t j, unsigned t) {
  p.column_profiles(d, j, t);
};

template <Predictor P>
std::vector<double> predict_all(const P& predictor, const Dataset& data, unsigned threads = 1) {
  if constexpr (BatchPredictor<P>) {
    return predictor.predict_rows(data, threads);
  } else {
    std::vector<double> out(data.rows());
    parallel_for(data.rows(), threads, [&](std::size_t i) { out[i] = predictor.predict(data.row(i)); });
    return out;
  }
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
  double mse = 0.0;
  double mae = 0.0;
  std::optional<double> explained_variance;  // absent when the response is constant
};

inline MetricsReport metrics(std::span<const double> predictions, std::span<const double> response) {
  if (response.empty()) throw DomainError("metrics need a non-empty test set");
  if (predictions.size() != response.size())
    throw DomainError("prediction and response lengths differ");
  const auto n = static_cast<double>(response.size());
  double sq = 0.0;
  double ab = 0.0;
  for (std::size_t i = 0; i < response.size(); ++i) {
    const double e = response[i] - predictions[i];
    sq += e * e;
    ab += std::fabs(e);
  }
  const double mean = std::accumulate(response.begin(), response.end(), 0.0) / n;
  double var = 0.0;
  for (double y : response) var += (y - mean) * (y - mean);
  var /= n;
  MetricsReport r{sq / n, ab / n, std::nullopt};
  if (var > 0.0) r.explained_variance = 1.0 - r.mse / var;
  return r;
}

template <Predictor P>
MetricsReport evaluate(const P& predictor, const Dataset& test, unsigned threads = 1) {
  if (test.empty()) throw DomainError("evaluate needs a non-empty test set");
  const auto pred = predict_all(predictor, test, threads);
  return metrics(pred, test.response());
}

// ---------------------------------------------------------------------------
// Permutation importance

enum class Loss { kSquared, kAbsolute };

inline double loss_value(Loss loss, double y, double p) {
  const double e = y - p;
  return loss == Loss::kSquared ? e * e : std::fabs(e);
}

struct ImportanceOptions {
  std::size_t n_permutations = 1000;
  std::uint64_t seed = 0;
  Loss loss = Loss::kSquared;
  unsigned threads = 1;
  std::size_t tabulate_limit = 256;  // max distinct values for table lookup
};

struct VariableImportance {
  std::size_t variable = 0;  // 0-based
  double importance = 0.0;   // percent
  double mean_permuted_loss = 0.0;
  double sd_permuted_loss = 0.0;
  std::vector<double> permuted_losses;
};

struct ImportanceReport {
  double e_hat = 0.0;
  std::size_t n_permutations = 0;
  Loss loss = Loss::kSquared;
  std::vector<VariableImportance> variables;

  std::vector<double> values() const {
    std::vector<double> v;
    for (const auto& x : variables) v.push_back(x.importance);
    return v;
  }
};

namespace detail {

// Per-row evaluator of the predictor as a function of one column.
class ColumnResponse {
 public:
  enum class Kind { kSteps, kTable, kDirect };

  Kind kind = Kind::kDirect;
  std::vector<StepFunction> steps;       // kSteps: one per row
  std::vector<double> distinct;          // kTable: sorted distinct column values
  std::vector<std::uint32_t> value_id;   // kTable: id of each row's own value
  std::vector<double> table;             // kTable: rows x distinct
};

template <Predictor P>
ColumnResponse build_column_response(const P& predictor, const Dataset& test, std::size_t j,
                                     const ImportanceOptions& opt) {
  const std::size_t n = test.rows();
  ColumnResponse cr;
  if constexpr (BatchProfiler<P>) {
    std::optional<std::vector<StepFunction>> steps = predictor.column_profiles(test, j, opt.threads);
    if (steps) {
      cr.kind = ColumnResponse::Kind::kSteps;
      cr.steps = std::move(*steps);
      return cr;
    }
  } else if constexpr (ExactProfiler<P> || PartialProfiler<P>) {
    std::vector<StepFunction> steps(n);
    std::vector<std::uint8_t> ok(n, 1);
    parallel_for(n, opt.threads, [&](std::size_t i) {
      if constexpr (ExactProfiler<P>) {
        steps[i] = predictor.column_profile(test.row(i), j);
      } else {
        auto s = predictor.column_profile(test.row(i), j);
        if (s)
          steps[i] = std::move(*s);
        else
          ok[i] = 0;
      }
    });
    if (std::all_of(ok.begin(), ok.end(), [](std::uint8_t v) { return v != 0; })) {
      cr.kind = ColumnResponse::Kind::kSteps;
      cr.steps = std::move(steps);
      return cr;
    }
  }
  auto col = test.column(j);
  std::vector<double> distinct = col;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() > opt.tabulate_limit) return cr;

  cr.kind = ColumnResponse::Kind::kTable;
  cr.value_id.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    cr.value_id[i] = static_cast<std::uint32_t>(
        std::lower_bound(distinct.begin(), distinct.end(), col[i]) - distinct.begin());
  const std::size_t k = distinct.size();
  cr.table.resize(n * k);
  const auto features = test.features();
  const std::vector<double> response(test.response().begin(), test.response().end());
  for (std::size_t v = 0; v < k; ++v) {
    std::vector<double> moved(features.begin(), features.end());
    for (std::size_t i = 0; i < n; ++i) moved[i * test.cols() + j] = distinct[v];
    const auto pred =
        predict_all(predictor, Dataset(test.cols(), std::move(moved), response), opt.threads);
    for (std::size_t i = 0; i < n; ++i) cr.table[i * k + v] = pred[i];
  }
  cr.distinct = std::move(distinct);
  return cr;
}

}  // namespace detail

/// Whole-test-set permutation importance of every feature. Permutation r of
/// column j is driven by derive_seed(derive_seed(seed, j), r).
template <Predictor P>
ImportanceReport permutation_importance(const P& predictor, const Dataset& test,
                                        const ImportanceOptions& opt = {}) {
  if (test.empty()) throw DomainError("permutation_importance needs a non-empty test set");
  if (opt.n_permutations < 1) throw ConfigError("n_permutations must be >= 1");
  const std::size_t n = test.rows();
  const auto y = test.response();
  const auto base = predict_all(predictor, test, opt.threads);

  double base_loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) base_loss += loss_value(opt.loss, y[i], base[i]);
  ImportanceReport report;
  report.e_hat = base_loss / static_cast<double>(n);
  report.n_permutations = opt.n_permutations;
  report.loss = opt.loss;
  if (!(report.e_hat > 0.0))
    throw DegenerateBaseline("baseline loss is zero; importance is undefined");

  for (std::size_t j = 0; j < test.cols(); ++j) {
    const auto cr = detail::build_column_response(predictor, test, j, opt);
    const auto col = test.column(j);
    const std::uint64_t column_seed = derive_seed(opt.seed, j);
    VariableImportance vi;
    vi.variable = j;
    vi.permuted_losses.resize(opt.n_permutations);
    parallel_for(opt.n_permutations, opt.threads, [&](std::size_t rep) {
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(column_seed, rep));
      std::shuffle(perm.begin(), perm.end(), rng);
      double total = 0.0;
      using Kind = detail::ColumnResponse::Kind;
      if (cr.kind == Kind::kSteps) {
        for (std::size_t i = 0; i < n; ++i) total += loss_value(opt.loss, y[i], cr.steps[i](col[perm[i]]));
      } else if (cr.kind == Kind::kTable) {
        const std::size_t k = cr.distinct.size();
        for (std::size_t i = 0; i < n; ++i)
          total += loss_value(opt.loss, y[i], cr.table[i * k + cr.value_id[perm[i]]]);
      } else {
        std::vector<double> x(test.cols());
        for (std::size_t i = 0; i < n; ++i) {
          const auto r = test.row(i);
          std::copy(r.begin(), r.end(), x.begin());
          x[j] = col[perm[i]];
          total += loss_value(opt.loss, y[i], predictor.predict(std::span<const double>(x)));
        }
      }
      vi.permuted_losses[rep] = total / static_cast<double>(n);
    });
    // Averaging deviations from e_hat keeps an untouched column at exactly 0.
    const auto reps = static_cast<double>(opt.n_permutations);
    double excess = 0.0;
    for (double v : vi.permuted_losses) excess += v - report.e_hat;
    excess /= reps;
    vi.mean_permuted_loss = report.e_hat + excess;
    double ss = 0.0;
    for (double v : vi.permuted_losses) {
      const double dev = (v - report.e_hat) - excess;
      ss += dev * dev;
    }
    vi.sd_permuted_loss = opt.n_permutations > 1 ? std::sqrt(ss / (reps - 1.0)) : 0.0;
    vi.importance = 100.0 * excess / report.e_hat;
    report.variables.push_back(std::move(vi));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Variable usage

struct OperationProfile {
  std::size_t operation = 0;
  std::size_t n_split = 0;    // trees split at this operation
  std::size_t n_watched = 0;  // ... on a watched variable
  double proportion = 0.0;
};

struct LeafUsage {
  std::size_t n_leaves = 0;
  std::vector<double> per_watched;  // fraction of leaves whose path uses watched[k]
  double any = 0.0;                 // uses at least one watched variable
  double joint = 0.0;               // uses all watched variables
  std::uint64_t rows_total = 0;     // sum of leaf row counts
  double data_fraction_joint = 0.0;
};

struct UsageReport {
  std::vector<std::size_t> watched;
  std::vector<OperationProfile> split_order_profile;  // operations with n_split > 0
  std::vector<LeafUsage> leaf_usage;                  // one per tree
  double data_fraction_joint = 0.0;                   // mean over trees
  std::vector<double> variable_leaf_usage;            // all features, mean over trees
  std::size_t median_tree_size = 0;

  /// Pooled watched-split proportion over operations in [m/4, 3m/4],
  /// m = median node count.
  double mid_construction_proportion() const {
    const std::size_t lo = (median_tree_size + 3) / 4;
    const std::size_t hi = 3 * median_tree_size / 4;
    std::size_t split = 0;
    std::size_t watched_split = 0;
    for (const auto& p : split_order_profile) {
      if (p.operation < lo || p.operation > hi) continue;
      split += p.n_split;
      watched_split += p.n_watched;
    }
    return split == 0 ? 0.0 : static_cast<double>(watched_split) / static_cast<double>(split);
  }

  double median_joint_leaf_proportion() const {
    std::vector<double> v;
    for (const auto& l : leaf_usage) v.push_back(l.joint);
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  }
};

/// Accumulates usage statistics tree by tree.
class UsageAccumulator {
 public:
  UsageAccumulator(std::size_t n_features, std::vector<std::size_t> watched)
      : n_features_(n_features), watched_(std::move(watched)), leaf_usage_sum_(n_features, 0.0) {
    for (std::size_t w : watched_)
      if (w >= n_features_) throw DomainError("watched variable out of range");
  }

  void add(const cart::RegressionTree& tree) {
    if (tree.n_features() != n_features_) throw DomainError("tree feature count mismatch");
    const auto s = cart::tree_structure_report(tree);
    sizes_.push_back(s.operations);
    for (const auto& split : s.splits) {
      if (profile_.size() < split.operation) profile_.resize(split.operation);
      auto& p = profile_[split.operation - 1];
      ++p.n_split;
      if (is_watched(split.feature)) ++p.n_watched;
    }
    LeafUsage lu;
    lu.n_leaves = s.leaves.size();
    lu.per_watched.assign(watched_.size(), 0.0);
    std::vector<std::size_t> var_count(n_features_, 0);
    std::uint64_t joint_rows = 0;
    std::size_t any = 0;
    std::size_t joint = 0;
    for (const auto& leaf : s.leaves) {
      lu.rows_total += leaf.rows;
      for (std::size_t v : leaf.involved) ++var_count[v];
      std::size_t hits = 0;
      for (std::size_t k = 0; k < watched_.size(); ++k) {
        if (std::binary_search(leaf.involved.begin(), leaf.involved.end(), watched_[k])) {
          lu.per_watched[k] += 1.0;
          ++hits;
        }
      }
      if (hits > 0) ++any;
      if (!watched_.empty() && hits == watched_.size()) {
        ++joint;
        joint_rows += leaf.rows;
      }
    }
    const auto leaves = static_cast<double>(lu.n_leaves);
    for (auto& v : lu.per_watched) v /= leaves;
    lu.any = static_cast<double>(any) / leaves;
    lu.joint = static_cast<double>(joint) / leaves;
    lu.data_fraction_joint =
        lu.rows_total == 0 ? 0.0 : static_cast<double>(joint_rows) / static_cast<double>(lu.rows_total);
    for (std::size_t v = 0; v < n_features_; ++v)
      leaf_usage_sum_[v] += static_cast<double>(var_count[v]) / leaves;
    leaves_.push_back(std::move(lu));
  }

  UsageReport finish() const {
    UsageReport r;
    r.watched = watched_;
    for (std::size_t k = 0; k < profile_.size(); ++k) {
      if (profile_[k].n_split == 0) continue;
      OperationProfile p = profile_[k];
      p.operation = k + 1;
      p.proportion = static_cast<double>(p.n_watched) / static_cast<double>(p.n_split);
      r.split_order_profile.push_back(p);
    }
    r.leaf_usage = leaves_;
    const auto trees = static_cast<double>(std::max<std::size_t>(1, leaves_.size()));
    for (const auto& l : leaves_) r.data_fraction_joint += l.data_fraction_joint;
    r.data_fraction_joint /= trees;
    r.variable_leaf_usage = leaf_usage_sum_;
    for (auto& v : r.variable_leaf_usage) v /= trees;
    if (!sizes_.empty()) {
      auto sizes = sizes_;
      std::nth_element(sizes.begin(), sizes.begin() + static_cast<std::ptrdiff_t>(sizes.size() / 2),
                       sizes.end());
      r.median_tree_size = sizes[sizes.size() / 2];
    }
    return r;
  }

 private:
  bool is_watched(std::size_t f) const {
    return std::find(watched_.begin(), watched_.end(), f) != watched_.end();
  }

  std::size_t n_features_;
  std::vector<std::size_t> watched_;
  std::vector<OperationProfile> profile_;
  std::vector<LeafUsage> leaves_;
  std::vector<double> leaf_usage_sum_;
  std::vector<std::size_t> sizes_;
};

inline UsageReport usage_statistics(std::span<const cart::RegressionTree> trees,
                                    std::span<const std::size_t> watched, const Dataset& train) {
  UsageAccumulator acc(train.cols(), {watched.begin(), watched.end()});
  for (const auto& t : trees) acc.add(t);
  return acc.finish();
}

// ---------------------------------------------------------------------------
// Importance/usage discrepancy screen

struct ScreenThresholds {
  double margin = 0.5;          // importance percentile minus usage percentile
  double min_importance = 0.0;  // percent
};

struct SuspectVariable {
  std::size_t variable = 0;
  double importance = 0.0;
  double leaf_usage = 0.0;
  double importance_percentile = 0.0;
  double usage_percentile = 0.0;
  double discrepancy = 0.0;
};

struct ArmCandidate {
  std::size_t a = 0;
  std::size_t b = 0;
  std::string spec;  // parseable by forest::ArmFunction::parse
};

struct ScreenResult {
  std::vector<SuspectVariable> flagged;  // most suspicious first
  std::vector<ArmCandidate> arm_candidates;
};

/// Percentile of each value in [0, 1] from ascending average ranks.
inline std::vector<double> percentile_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<double> out(n, 0.0);
  if (n <= 1) return out;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  for (std::size_t k = 0; k < n;) {
    std::size_t e = k;
    while (e + 1 < n && values[idx[e + 1]] == values[idx[k]]) ++e;
    const double rank = 0.5 * static_cast<double>(k + e);
    for (std::size_t q = k; q <= e; ++q) out[idx[q]] = rank / static_cast<double>(n - 1);
    k = e + 1;
  }
  return out;
}

inline bool is_binary_column(const Dataset& data, std::size_t j) {
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const double v = data.at(i, j);
    if (v != 0.0 && v != 1.0) return false;
  }
  return true;
}

/// Flags variables that rank much higher in importance than in leaf usage
/// and proposes agreement-indicator arms over pairs of flagged binary
/// variables (binary-ness read from `data` when given).
inline ScreenResult discrepancy_screen(const ImportanceReport& importance, const UsageReport& usage,
                                       const ScreenThresholds& thresholds = {},
                                       const Dataset* data = nullptr) {
  const auto imp = importance.values();
  if (imp.size() != usage.variable_leaf_usage.size())
    throw DomainError("importance and usage cover different variable sets");
  const auto ip = percentile_ranks(imp);
  const auto up = percentile_ranks(usage.variable_leaf_usage);
  ScreenResult result;
  for (std::size_t j = 0; j < imp.size(); ++j) {
    const double disc = ip[j] - up[j];
    if (disc >= thresholds.margin && imp[j] >= thresholds.min_importance)
      result.flagged.push_back({j, imp[j], usage.variable_leaf_usage[j], ip[j], up[j], disc});
  }
  std::stable_sort(result.flagged.begin(), result.flagged.end(),
                   [](const SuspectVariable& a, const SuspectVariable& b) {
                     return a.discrepancy > b.discrepancy;
                   });
  if (data) {
    std::vector<std::size_t> binary;
    for (const auto& f : result.flagged)
      if (is_binary_column(*data, f.variable)) binary.push_back(f.variable);
    std::sort(binary.begin(), binary.end());
    for (std::size_t x = 0; x < binary.size(); ++x)
      for (std::size_t z = x + 1; z < binary.size(); ++z)
        result.arm_candidates.push_back({binary[x], binary[z],
                                         forest::ArmFunction::agreement(binary[x], binary[z]).name});
  }
  return result;
}

}  // namespace hiddenrf::diagnostics

#endif  // HIDDENRF_DIAGNOSTICS_HPP_

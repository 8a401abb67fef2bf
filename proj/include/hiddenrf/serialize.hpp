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

// JSON documents for trees, forests and armed forests.
//
//   tree:   {"n_features": d, "nodes": [{"id", "operation", "kind": "split"|"leaf",
//            "feature", "threshold", "left", "right" | "value", "rows"}, ...]}
//   forest: {"format": "hiddenrf.forest", "version": 1, "params": {...},
//            "n_features", "n_train", "trees": [tree, ...]}
//   armed:  {"format": "hiddenrf.armed_forest", "version": 1, "arm": "<spec>",
//            "arms": [{"label", "rows", "mean_only", "forest"}], "fallback": forest}
//
// Node arrays must be in breadth-first order with right == left + 1, which is
// the layout fit_tree produces.

#ifndef HIDDENRF_SERIALIZE_HPP_
#define HIDDENRF_SERIALIZE_HPP_

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hiddenrf/cart.hpp"
#include "hiddenrf/common.hpp"
#include "hiddenrf/forest.hpp"
#include "json.hpp"

namespace hiddenrf::io {

using nlohmann::json;

inline constexpr int kFormatVersion = 1;

inline json to_json(const cart::RegressionTree& tree) {
  json nodes = json::array();
  const auto& ns = tree.nodes();
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const auto& n = ns[i];
    json j{{"id", i},
           {"operation", cart::RegressionTree::operation_index(i)},
           {"rows", tree.node_rows()[i]}};
    if (n.is_leaf()) {
      j["kind"] = "leaf";
      j["value"] = n.mean();
    } else {
      j["kind"] = "split";
      j["feature"] = n.feature;
      j["threshold"] = n.threshold();
      j["left"] = n.left;
      j["right"] = n.right();
    }
    nodes.push_back(std::move(j));
  }
  return {{"n_features", tree.n_features()}, {"nodes", std::move(nodes)}};
}

inline cart::RegressionTree tree_from_json(const json& j) {
  try {
    const auto d = j.at("n_features").get<std::size_t>();
    const auto& arr = j.at("nodes");
    if (!arr.is_array() || arr.empty()) throw IoError("tree has no nodes");
    std::vector<cart::Node> nodes(arr.size());
    std::vector<std::uint32_t> rows(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const auto& e = arr[i];
      if (e.contains("id") && e.at("id").get<std::size_t>() != i)
        throw IoError("tree nodes are not listed in id order");
      rows[i] = e.at("rows").get<std::uint32_t>();
      const auto kind = e.at("kind").get<std::string>();
      if (kind == "leaf") {
        nodes[i].value = e.at("value").get<double>();
        continue;
      }
      if (kind != "split") throw IoError("unknown node kind '" + kind + "'");
      const auto f = e.at("feature").get<std::int32_t>();
      const auto left = e.at("left").get<std::int32_t>();
      const auto right = e.at("right").get<std::int32_t>();
      if (f < 0 || static_cast<std::size_t>(f) >= d) throw IoError("split feature out of range");
      if (right != left + 1 || left <= static_cast<std::int32_t>(i) ||
          static_cast<std::size_t>(right) >= arr.size())
        throw IoError("split children must be adjacent and follow their parent");
      nodes[i].feature = f;
      nodes[i].value = e.at("threshold").get<double>();
      nodes[i].left = left;
    }
    return cart::RegressionTree(std::move(nodes), std::move(rows), d);
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed tree document: ") + e.what());
  }
}

inline json to_json(const forest::ForestParams& p) {
  json j{{"n_trees", p.n_trees},
         {"min_node_distinct", p.min_node_distinct},
         {"seed", p.seed},
         {"resample", p.resample.kind == forest::ResampleKind::kBootstrap ? "bootstrap" : "subsample"}};
  j["mtry"] = p.mtry ? json(*p.mtry) : json(nullptr);
  j["max_nodes"] = p.max_nodes ? json(*p.max_nodes) : json(nullptr);
  if (p.resample.kind == forest::ResampleKind::kSubsample) j["fraction"] = p.resample.fraction;
  return j;
}

inline forest::ForestParams params_from_json(const json& j) {
  forest::ForestParams p;
  p.n_trees = j.at("n_trees").get<std::size_t>();
  p.min_node_distinct = j.at("min_node_distinct").get<std::size_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("mtry") && !j["mtry"].is_null()) p.mtry = j["mtry"].get<std::size_t>();
  if (j.contains("max_nodes") && !j["max_nodes"].is_null())
    p.max_nodes = j["max_nodes"].get<std::size_t>();
  const auto kind = j.value("resample", std::string("bootstrap"));
  if (kind == "subsample")
    p.resample = forest::Resample::subsample(j.at("fraction").get<double>());
  else if (kind != "bootstrap")
    throw IoError("unknown resample kind '" + kind + "'");
  return p;
}

inline json to_json(const forest::Forest& f) {
  json trees = json::array();
  for (const auto& t : f.trees()) trees.push_back(to_json(t));
  return {{"format", "hiddenrf.forest"},
          {"version", kFormatVersion},
          {"params", to_json(f.params())},
          {"n_features", f.n_features()},
          {"n_train", f.n_train()},
          {"trees", std::move(trees)}};
}

inline void check_header(const json& j, const std::string& format) {
  if (j.value("format", std::string()) != format)
    throw IoError("expected a '" + format + "' document");
  if (j.value("version", 0) != kFormatVersion)
    throw IoError("unsupported " + format + " version " + std::to_string(j.value("version", 0)));
}

inline forest::Forest forest_from_json(const json& j) {
  try {
    check_header(j, "hiddenrf.forest");
    std::vector<cart::RegressionTree> trees;
    for (const auto& t : j.at("trees")) trees.push_back(tree_from_json(t));
    const auto d = j.at("n_features").get<std::size_t>();
    for (const auto& t : trees)
      if (t.n_features() != d) throw IoError("tree feature count disagrees with forest");
    return forest::Forest(std::move(trees), params_from_json(j.at("params")), d,
                          j.at("n_train").get<std::size_t>());
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed forest document: ") + e.what());
  }
}

inline json to_json(const forest::ArmedForest& a) {
  json arms = json::array();
  for (const auto& [label, f] : a.arms()) {
    json entry{{"label", label}, {"forest", to_json(f)}};
    for (const auto& note : a.notes()) {
      if (note.label != label) continue;
      entry["rows"] = note.rows;
      entry["mean_only"] = note.mean_only;
    }
    arms.push_back(std::move(entry));
  }
  return {{"format", "hiddenrf.armed_forest"},
          {"version", kFormatVersion},
          {"arm", a.arm_function().name},
          {"arms", std::move(arms)},
          {"fallback", to_json(a.fallback())}};
}

inline forest::ArmedForest armed_forest_from_json(const json& j) {
  try {
    check_header(j, "hiddenrf.armed_forest");
    forest::Forest fallback = forest_from_json(j.at("fallback"));
    auto arm = forest::ArmFunction::parse(j.at("arm").get<std::string>(), fallback.n_features());
    std::map<std::int64_t, forest::Forest> arms;
    std::vector<forest::ArmFitNote> notes;
    for (const auto& e : j.at("arms")) {
      const auto label = e.at("label").get<std::int64_t>();
      arms.emplace(label, forest_from_json(e.at("forest")));
      notes.push_back({label, e.value("rows", std::size_t{0}), e.value("mean_only", false)});
    }
    return forest::ArmedForest(std::move(arm), std::move(arms), std::move(fallback),
                               std::move(notes));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed armed forest document: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("armed forest document has a bad arm spec: ") + e.what());
  }
}

inline json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw IoError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void save_json(const std::string& path, const json& j, int indent = -1) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << j.dump(indent) << '\n';
  if (!os) throw IoError("write failed for '" + path + "'");
}

}  // namespace hiddenrf::io

#endif  // HIDDENRF_SERIALIZE_HPP_

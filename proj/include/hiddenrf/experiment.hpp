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

// Config-driven experiments: simulate or load data, fit the configured
// predictors, evaluate them and write CSV reports plus a JSON manifest.
//
// Config document (JSON):
//
//   {
//     "name": "table1_n10k",
//     "seed": 1,
//     "model": {"type": "model8", "beta": "three_quarter_alpha"},
//     "n_train": 10000, "n_test": 10000,
//     "large": false,
//     "predictors": [
//       {"name": "rf3", "type": "forest", "n_trees": 1000, "mtry": 3},
//       {"name": "arms", "type": "armed_forest", "arm": "delta_x1_x2", "mtry": 3},
//       {"name": "oracle", "type": "oracle"},
//       {"name": "marginal", "type": "marginal_oracle"}
//     ],
//     "diagnostics": {
//       "importance": {"predictors": ["arms"], "n_permutations": 1000},
//       "usage": {"predictors": ["rf3"], "watched": [1, 2]}
//     },
//     "output_dir": "out/table1_n10k"
//   }
//
// Model types: "model8" (beta "three_quarter_alpha", "negative_alpha" or an
// explicit vector), "model3" (d1, d2, d3, c, independent) and "csv" (train
// and test paths, relative to the config file). Variables are 1-based.

#ifndef HIDDENRF_EXPERIMENT_HPP_
#define HIDDENRF_EXPERIMENT_HPP_

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "hiddenrf/common.hpp"
#include "hiddenrf/dataset.hpp"
#include "hiddenrf/diagnostics.hpp"
#include "hiddenrf/forest.hpp"
#include "hiddenrf/oracle.hpp"
#include "hiddenrf/serialize.hpp"
#include "hiddenrf/sim.hpp"

namespace hiddenrf::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config types

struct Model8Config {
  sim::Model8Params params;
  std::string beta_label;
};

struct Model3Config {
  std::size_t d1 = 2;
  std::size_t d2 = 3;
  std::size_t d3 = 5;
  double c0 = 1.0;
  double c1 = 1.0;
  double c2 = 1.0;
  bool independent = false;

  sim::PairwiseDensitySpec spec() const {
    auto s = independent ? sim::PairwiseDensitySpec::independent(d1, d2, d3)
                         : sim::PairwiseDensitySpec{};
    s.d1 = d1;
    s.d2 = d2;
    s.d3 = d3;
    s.c0 = c0;
    s.c1 = c1;
    s.c2 = c2;
    return s;
  }
};

struct CsvConfig {
  fs::path train;
  fs::path test;
};

using ModelConfig = std::variant<Model8Config, Model3Config, CsvConfig>;

enum class PredictorKind { kForest, kArmedForest, kOracle, kMarginalOracle };

struct PredictorConfig {
  std::string name;
  PredictorKind kind = PredictorKind::kForest;
  forest::ForestParams forest;  // seed filled in at run time
  std::string arm;
  std::optional<std::size_t> fallback_trees;
};

struct ImportanceConfig {
  std::vector<std::string> predictors;
  std::size_t n_permutations = 1000;
  diagnostics::Loss loss = diagnostics::Loss::kSquared;
};

struct UsageConfig {
  std::vector<std::string> predictors;
  std::vector<std::size_t> watched;  // 0-based
};

struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 0;
  ModelConfig model;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  bool large = false;
  std::vector<PredictorConfig> predictors;
  std::optional<ImportanceConfig> importance;
  std::optional<UsageConfig> usage;
  fs::path output_dir;
  json source;  // the document this was parsed from
};

struct ConfigIssue {
  std::string field;
  std::string message;
};

inline std::string describe(const std::vector<ConfigIssue>& issues) {
  std::string out;
  for (const auto& i : issues) out += "  " + i.field + ": " + i.message + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Parsing and validation

namespace detail {

class ConfigParser {
 public:
  explicit ConfigParser(fs::path base_dir) : base_(std::move(base_dir)) {}

  std::vector<ConfigIssue> issues;

  void fail(std::string field, std::string message) {
    issues.push_back({std::move(field), std::move(message)});
  }

  std::optional<std::size_t> count(const json& obj, const std::string& key, const std::string& path,
                                   bool required, std::size_t min = 1) {
    if (!obj.contains(key)) {
      if (required) fail(path, "is required");
      return std::nullopt;
    }
    const auto& v = obj[key];
    if (!v.is_number_integer() || v.get<std::int64_t>() < static_cast<std::int64_t>(min)) {
      fail(path, "must be an integer >= " + std::to_string(min));
      return std::nullopt;
    }
    return v.get<std::size_t>();
  }

  std::optional<double> number(const json& obj, const std::string& key, const std::string& path) {
    if (!obj.contains(key)) return std::nullopt;
    if (!obj[key].is_number()) {
      fail(path, "must be a number");
      return std::nullopt;
    }
    return obj[key].get<double>();
  }

  std::optional<std::string> string(const json& obj, const std::string& key, const std::string& path,
                                    bool required) {
    if (!obj.contains(key)) {
      if (required) fail(path, "is required");
      return std::nullopt;
    }
    if (!obj[key].is_string()) {
      fail(path, "must be a string");
      return std::nullopt;
    }
    return obj[key].get<std::string>();
  }

  void unknown_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
    for (const auto& [k, v] : obj.items()) {
      bool known = false;
      for (const char* allowed : keys) known = known || k == allowed;
      if (!known) fail(path.empty() ? k : path + "." + k, "unknown field");
    }
  }

  // Returns the feature count implied by the model, when it can be determined.
  std::optional<std::size_t> model(const json& m, ModelConfig& out) {
    if (!m.is_object()) {
      fail("model", "must be an object");
      return std::nullopt;
    }
    const auto type = string(m, "type", "model.type", true);
    if (!type) return std::nullopt;
    if (*type == "model8") {
      unknown_keys(m, "model", {"type", "beta", "noise_sd"});
      Model8Config c;
      const json beta = m.value("beta", json("three_quarter_alpha"));
      if (beta.is_string()) {
        const auto b = beta.get<std::string>();
        if (b == "three_quarter_alpha") {
          c.params = sim::Model8Params::standard(sim::BetaSetting::kThreeQuarterAlpha);
        } else if (b == "negative_alpha") {
          c.params = sim::Model8Params::standard(sim::BetaSetting::kNegativeAlpha);
        } else {
          fail("model.beta", "must be \"three_quarter_alpha\", \"negative_alpha\" or a vector");
          return std::nullopt;
        }
        c.beta_label = b;
      } else if (beta.is_array() && !beta.empty()) {
        const int k = static_cast<int>(beta.size());
        c.params = sim::Model8Params::standard(sim::BetaSetting::kThreeQuarterAlpha, k);
        for (int j = 0; j < k; ++j) {
          if (!beta[static_cast<std::size_t>(j)].is_number()) {
            fail("model.beta[" + std::to_string(j) + "]", "must be a number");
            return std::nullopt;
          }
          c.params.beta[j] = beta[static_cast<std::size_t>(j)].get<double>();
        }
        c.beta_label = "custom";
      } else {
        fail("model.beta", "must be \"three_quarter_alpha\", \"negative_alpha\" or a vector");
        return std::nullopt;
      }
      if (m.contains("noise_sd")) {
        const auto& ns = m["noise_sd"];
        if (!ns.is_array() || ns.size() != 3) {
          fail("model.noise_sd", "must be a list of three standard deviations");
        } else {
          for (std::size_t i = 0; i < 3; ++i) {
            if (!ns[i].is_number() || ns[i].get<double>() < 0.0) {
              fail("model.noise_sd[" + std::to_string(i) + "]", "must be a number >= 0");
              continue;
            }
            c.params.noise_sd[i] = ns[i].get<double>();
          }
        }
      }
      const std::size_t d = c.params.feature_dim();
      out = std::move(c);
      return d;
    }
    if (*type == "model3") {
      unknown_keys(m, "model", {"type", "d1", "d2", "d3", "c", "independent"});
      Model3Config c;
      if (auto v = count(m, "d1", "model.d1", false)) c.d1 = *v;
      if (auto v = count(m, "d2", "model.d2", false)) c.d2 = *v;
      if (auto v = count(m, "d3", "model.d3", false)) c.d3 = *v;
      if (m.contains("c")) {
        const auto& cs = m["c"];
        if (!cs.is_array() || cs.size() != 3) {
          fail("model.c", "must be a list of three positive scales");
        } else {
          double* dst[3] = {&c.c0, &c.c1, &c.c2};
          for (std::size_t i = 0; i < 3; ++i) {
            if (!cs[i].is_number() || !(cs[i].get<double>() > 0.0))
              fail("model.c[" + std::to_string(i) + "]", "must be a positive number");
            else
              *dst[i] = cs[i].get<double>();
          }
        }
      }
      if (m.contains("independent")) {
        if (!m["independent"].is_boolean())
          fail("model.independent", "must be a boolean");
        else
          c.independent = m["independent"].get<bool>();
      }
      const std::size_t d = c.d1 + c.d2 + c.d3;
      out = c;
      return d;
    }
    if (*type == "csv") {
      unknown_keys(m, "model", {"type", "train", "test"});
      CsvConfig c;
      const auto train = string(m, "train", "model.train", true);
      const auto test = string(m, "test", "model.test", true);
      if (!train || !test) return std::nullopt;
      c.train = resolve(*train);
      c.test = resolve(*test);
      std::optional<std::size_t> d;
      for (const auto& [field, path] : {std::pair{"model.train", c.train}, {"model.test", c.test}}) {
        const auto cols = csv_feature_count(path);
        if (!cols) {
          fail(field, "cannot read a dataset header from '" + path.string() + "'");
        } else if (d && *d != *cols) {
          fail(field, "train and test files have different feature counts");
        } else {
          d = cols;
        }
      }
      out = std::move(c);
      return d;
    }
    fail("model.type", "must be \"model8\", \"model3\" or \"csv\"");
    return std::nullopt;
  }

  void predictor(const json& p, const std::string& path, std::optional<std::size_t> d, bool model8,
                 PredictorConfig& out) {
    if (!p.is_object()) {
      fail(path, "must be an object");
      return;
    }
    if (auto name = string(p, "name", path + ".name", true)) out.name = *name;
    const auto type = string(p, "type", path + ".type", true);
    if (!type) return;
    if (*type == "oracle" || *type == "marginal_oracle") {
      unknown_keys(p, path, {"name", "type"});
      out.kind = *type == "oracle" ? PredictorKind::kOracle : PredictorKind::kMarginalOracle;
      if (!model8) fail(path + ".type", "oracle predictors need a model8 data source");
      return;
    }
    if (*type != "forest" && *type != "armed_forest") {
      fail(path + ".type", "must be forest, armed_forest, oracle or marginal_oracle");
      return;
    }
    const bool armed = *type == "armed_forest";
    out.kind = armed ? PredictorKind::kArmedForest : PredictorKind::kForest;
    if (armed)
      unknown_keys(p, path, {"name", "type", "n_trees", "mtry", "min_node_distinct", "max_nodes",
                             "resample", "fraction", "arm", "fallback_trees"});
    else
      unknown_keys(p, path, {"name", "type", "n_trees", "mtry", "min_node_distinct", "max_nodes",
                             "resample", "fraction"});
    auto& f = out.forest;
    if (auto v = count(p, "n_trees", path + ".n_trees", false)) f.n_trees = *v;
    if (auto v = count(p, "mtry", path + ".mtry", false)) {
      if (d && *v > *d)
        fail(path + ".mtry", "exceeds the feature count " + std::to_string(*d));
      f.mtry = v;
    }
    if (auto v = count(p, "min_node_distinct", path + ".min_node_distinct", false, 2))
      f.min_node_distinct = *v;
    if (auto v = count(p, "max_nodes", path + ".max_nodes", false)) f.max_nodes = v;
    const auto resample = string(p, "resample", path + ".resample", false).value_or("bootstrap");
    if (resample == "subsample") {
      const auto fr = number(p, "fraction", path + ".fraction");
      if (!fr || !(*fr > 0.0 && *fr <= 1.0))
        fail(path + ".fraction", "subsampling needs a fraction in (0, 1]");
      else
        f.resample = forest::Resample::subsample(*fr);
    } else if (resample != "bootstrap") {
      fail(path + ".resample", "must be \"bootstrap\" or \"subsample\"");
    }
    if (!armed) return;
    const auto arm = string(p, "arm", path + ".arm", true);
    if (arm) {
      out.arm = *arm;
      if (d) {
        try {
          forest::ArmFunction::parse(*arm, *d);
        } catch (const ConfigError& e) {
          fail(path + ".arm", e.what());
        }
      }
    }
    if (auto v = count(p, "fallback_trees", path + ".fallback_trees", false)) out.fallback_trees = v;
  }

  std::vector<std::string> names(const json& obj, const std::string& path,
                                 const std::set<std::string>& known) {
    std::vector<std::string> out;
    if (!obj.contains("predictors") || !obj["predictors"].is_array()) {
      fail(path + ".predictors", "must be a list of predictor names");
      return out;
    }
    const auto& arr = obj["predictors"];
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string field = path + ".predictors[" + std::to_string(i) + "]";
      if (!arr[i].is_string()) {
        fail(field, "must be a predictor name");
      } else if (!known.contains(arr[i].get<std::string>())) {
        fail(field, "names no configured predictor");
      } else {
        out.push_back(arr[i].get<std::string>());
      }
    }
    return out;
  }

  ExperimentConfig parse(const json& doc) {
    ExperimentConfig c;
    c.source = doc;
    if (!doc.is_object()) {
      fail("$", "config must be a JSON object");
      return c;
    }
    unknown_keys(doc, "", {"name", "seed", "model", "n_train", "n_test", "large", "predictors",
                           "diagnostics", "output_dir", "description"});
    c.name = string(doc, "name", "name", false).value_or("experiment");
    if (doc.contains("seed")) {
      if (!doc["seed"].is_number_unsigned())
        fail("seed", "must be a non-negative integer");
      else
        c.seed = doc["seed"].get<std::uint64_t>();
    } else {
      fail("seed", "is required");
    }
    std::optional<std::size_t> d;
    if (doc.contains("model"))
      d = model(doc["model"], c.model);
    else
      fail("model", "is required");
    const bool is_csv = std::holds_alternative<CsvConfig>(c.model);
    const bool is_model8 = std::holds_alternative<Model8Config>(c.model);
    c.n_train = count(doc, "n_train", "n_train", !is_csv).value_or(0);
    c.n_test = count(doc, "n_test", "n_test", !is_csv).value_or(0);
    if (doc.contains("large")) {
      if (!doc["large"].is_boolean())
        fail("large", "must be a boolean");
      else
        c.large = doc["large"].get<bool>();
    }
    // Output paths are relative to the working directory, input paths to the config.
    c.output_dir = string(doc, "output_dir", "output_dir", false).value_or("out/" + c.name);

    std::set<std::string> known;
    if (!doc.contains("predictors") || !doc["predictors"].is_array() || doc["predictors"].empty()) {
      fail("predictors", "must be a non-empty list");
    } else {
      const auto& arr = doc["predictors"];
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string path = "predictors[" + std::to_string(i) + "]";
        PredictorConfig p;
        predictor(arr[i], path, d, is_model8, p);
        if (!p.name.empty() && !known.insert(p.name).second)
          fail(path + ".name", "duplicates an earlier predictor name");
        c.predictors.push_back(std::move(p));
      }
    }

    if (doc.contains("diagnostics")) {
      const auto& dg = doc["diagnostics"];
      if (!dg.is_object()) {
        fail("diagnostics", "must be an object");
        return c;
      }
      unknown_keys(dg, "diagnostics", {"importance", "usage"});
      if (dg.contains("importance")) {
        const auto& im = dg["importance"];
        ImportanceConfig ic;
        if (!im.is_object()) {
          fail("diagnostics.importance", "must be an object");
        } else {
          unknown_keys(im, "diagnostics.importance", {"predictors", "n_permutations", "loss"});
          ic.predictors = names(im, "diagnostics.importance", known);
          if (auto v = count(im, "n_permutations", "diagnostics.importance.n_permutations", false))
            ic.n_permutations = *v;
          const auto loss =
              string(im, "loss", "diagnostics.importance.loss", false).value_or("squared");
          if (loss == "absolute")
            ic.loss = diagnostics::Loss::kAbsolute;
          else if (loss != "squared")
            fail("diagnostics.importance.loss", "must be \"squared\" or \"absolute\"");
          c.importance = std::move(ic);
        }
      }
      if (dg.contains("usage")) {
        const auto& us = dg["usage"];
        UsageConfig uc;
        if (!us.is_object()) {
          fail("diagnostics.usage", "must be an object");
        } else {
          unknown_keys(us, "diagnostics.usage", {"predictors", "watched"});
          uc.predictors = names(us, "diagnostics.usage", known);
          for (const auto& n : uc.predictors)
            for (const auto& p : c.predictors)
              if (p.name == n && p.kind != PredictorKind::kForest &&
                  p.kind != PredictorKind::kArmedForest)
                fail("diagnostics.usage.predictors", "'" + n + "' has no trees to inspect");
          if (!us.contains("watched") || !us["watched"].is_array() || us["watched"].empty()) {
            fail("diagnostics.usage.watched", "must be a non-empty list of 1-based variables");
          } else {
            const auto& w = us["watched"];
            for (std::size_t i = 0; i < w.size(); ++i) {
              const std::string field = "diagnostics.usage.watched[" + std::to_string(i) + "]";
              if (!w[i].is_number_integer() || w[i].get<std::int64_t>() < 1 ||
                  (d && w[i].get<std::size_t>() > *d))
                fail(field, "must be a variable number between 1 and the feature count");
              else
                uc.watched.push_back(w[i].get<std::size_t>() - 1);
            }
          }
          c.usage = std::move(uc);
        }
      }
    }
    return c;
  }

 private:
  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() || base_.empty() ? path : base_ / path;
  }

  static std::optional<std::size_t> csv_feature_count(const fs::path& path) {
    std::ifstream is(path);
    std::string header;
    if (!is || !std::getline(is, header)) return std::nullopt;
    if (!header.empty() && header.back() == '\r') header.pop_back();
    const auto cells = split_csv_line(header);
    if (cells.size() < 2) return std::nullopt;
    return cells.size() - 1;
  }

  fs::path base_;
};

}  // namespace detail

/// Parses a config document; relative paths resolve against `base_dir`.
/// Throws ConfigError listing every issue found.
inline ExperimentConfig parse_config(const json& doc, const fs::path& base_dir = {}) {
  detail::ConfigParser parser(base_dir);
  auto config = parser.parse(doc);
  if (!parser.issues.empty())
    throw ConfigError("invalid experiment config:\n" + describe(parser.issues));
  return config;
}

inline std::vector<ConfigIssue> validate_config(const json& doc, const fs::path& base_dir = {}) {
  detail::ConfigParser parser(base_dir);
  parser.parse(doc);
  return parser.issues;
}

/// Reads and validates a config file without side effects. A missing or
/// unparseable file throws IoError; content problems come back as issues.
inline std::vector<ConfigIssue> validate_config(const fs::path& path) {
  return validate_config(io::load_json(path.string()), path.parent_path());
}

inline ExperimentConfig load_config(const fs::path& path) {
  return parse_config(io::load_json(path.string()), path.parent_path());
}

// ---------------------------------------------------------------------------
// Report writers

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string fmt(double v) { return format_double(v); }

inline std::string metrics_csv_header() { return "predictor,type,mse,mae,explained_variance\n"; }

inline std::string metrics_csv_row(const std::string& name, const std::string& type,
                                   const diagnostics::MetricsReport& m) {
  return name + "," + type + "," + fmt(m.mse) + "," + fmt(m.mae) + "," +
         (m.explained_variance ? fmt(*m.explained_variance) : std::string()) + "\n";
}

inline std::string importance_csv_header() {
  return "predictor,variable,importance,e_hat,mean_permuted_loss,sd_permuted_loss,n_permutations\n";
}

inline std::string importance_csv_rows(const std::string& name, const diagnostics::ImportanceReport& r) {
  std::string out;
  for (const auto& v : r.variables)
    out += name + ",x" + std::to_string(v.variable + 1) + "," + fmt(v.importance) + "," +
           fmt(r.e_hat) + "," + fmt(v.mean_permuted_loss) + "," + fmt(v.sd_permuted_loss) + "," +
           std::to_string(r.n_permutations) + "\n";
  return out;
}

inline std::string usage_profile_csv_header() {
  return "predictor,operation,n_split,n_watched,proportion\n";
}

inline std::string usage_profile_csv_rows(const std::string& name, const diagnostics::UsageReport& r) {
  std::string out;
  for (const auto& p : r.split_order_profile)
    out += name + "," + std::to_string(p.operation) + "," + std::to_string(p.n_split) + "," +
           std::to_string(p.n_watched) + "," + fmt(p.proportion) + "\n";
  return out;
}

inline std::string leaf_usage_csv_header(const std::vector<std::size_t>& watched) {
  std::string out = "predictor,tree,n_leaves";
  for (std::size_t w : watched) out += ",x" + std::to_string(w + 1);
  return out + ",any,joint,data_fraction_joint\n";
}

inline std::string leaf_usage_csv_rows(const std::string& name, const diagnostics::UsageReport& r) {
  std::string out;
  for (std::size_t t = 0; t < r.leaf_usage.size(); ++t) {
    const auto& l = r.leaf_usage[t];
    out += name + "," + std::to_string(t + 1) + "," + std::to_string(l.n_leaves);
    for (double v : l.per_watched) out += "," + fmt(v);
    out += "," + fmt(l.any) + "," + fmt(l.joint) + "," + fmt(l.data_fraction_joint) + "\n";
  }
  return out;
}

inline std::string usage_summary_csv_rows(const std::string& name, const diagnostics::UsageReport& r) {
  std::string out;
  auto row = [&](const std::string& stat, double v) { out += name + "," + stat + "," + fmt(v) + "\n"; };
  row("mid_construction_proportion", r.mid_construction_proportion());
  row("median_joint_leaf_proportion", r.median_joint_leaf_proportion());
  row("data_fraction_joint", r.data_fraction_joint);
  row("median_tree_size", static_cast<double>(r.median_tree_size));
  for (std::size_t j = 0; j < r.variable_leaf_usage.size(); ++j)
    row("leaf_usage_x" + std::to_string(j + 1), r.variable_leaf_usage[j]);
  return out;
}

inline std::string screen_csv_rows(const std::string& name, const diagnostics::ScreenResult& s) {
  std::string out;
  for (const auto& f : s.flagged)
    out += name + ",flag,x" + std::to_string(f.variable + 1) + "," + fmt(f.importance) + "," +
           fmt(f.leaf_usage) + "," + fmt(f.discrepancy) + "\n";
  for (const auto& a : s.arm_candidates) out += name + ",arm," + a.spec + ",,,\n";
  return out;
}

// ---------------------------------------------------------------------------
// Running

struct RunOptions {
  unsigned threads = default_thread_count();
  bool allow_large = false;
  std::optional<std::size_t> trees_override;  // caps every forest's tree count
  std::optional<fs::path> output_dir;
  std::optional<std::uint64_t> seed;
  bool write_files = true;
};

struct PredictorResult {
  std::string name;
  std::string type;
  diagnostics::MetricsReport metrics;
  double fit_seconds = 0.0;
  std::vector<forest::ArmFitNote> arm_notes;
};

struct ExperimentReport {
  std::string name;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::vector<PredictorResult> predictors;
  std::vector<std::pair<std::string, diagnostics::ImportanceReport>> importance;
  std::vector<std::pair<std::string, diagnostics::UsageReport>> usage;
  std::vector<std::pair<std::string, diagnostics::ScreenResult>> screens;
  std::vector<fs::path> files;
  double wall_seconds = 0.0;

  const PredictorResult& result(const std::string& predictor) const {
    for (const auto& p : predictors)
      if (p.name == predictor) return p;
    throw DomainError("no predictor named '" + predictor + "'");
  }
};

inline const char* kind_name(PredictorKind k) {
  switch (k) {
    case PredictorKind::kForest: return "forest";
    case PredictorKind::kArmedForest: return "armed_forest";
    case PredictorKind::kOracle: return "oracle";
    case PredictorKind::kMarginalOracle: return "marginal_oracle";
  }
  return "unknown";
}

/// Train and test sets drawn from independent derived streams.
inline std::pair<Dataset, Dataset> make_data(const ExperimentConfig& c, std::uint64_t seed) {
  return std::visit(
      [&](const auto& m) -> std::pair<Dataset, Dataset> {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, CsvConfig>) {
          return {load_csv(m.train.string()), load_csv(m.test.string())};
        } else {
          Rng train_rng(derive_seed(seed, std::string_view("train")));
          Rng test_rng(derive_seed(seed, std::string_view("test")));
          if constexpr (std::is_same_v<M, Model8Config>) {
            return {sim::simulate_model8(c.n_train, m.params, train_rng),
                    sim::simulate_model8(c.n_test, m.params, test_rng)};
          } else {
            const auto spec = m.spec();
            const auto psi = sim::additive_response();
            return {sim::simulate_model3(c.n_train, spec, psi, train_rng),
                    sim::simulate_model3(c.n_test, spec, psi, test_rng)};
          }
        }
      },
      c.model);
}

inline json manifest_json(const ExperimentConfig& c, const ExperimentReport& r, const RunOptions& opt) {
  json preds = json::array();
  for (const auto& p : r.predictors) {
    json e{{"name", p.name}, {"type", p.type}, {"fit_seconds", p.fit_seconds}};
    if (!p.arm_notes.empty()) {
      json notes = json::array();
      for (const auto& n : p.arm_notes)
        notes.push_back({{"label", n.label}, {"rows", n.rows}, {"mean_only", n.mean_only}});
      e["arms"] = std::move(notes);
    }
    preds.push_back(std::move(e));
  }
  json files = json::array();
  for (const auto& f : r.files) files.push_back(f.filename().string());
  files.push_back("manifest.json");
  return {{"name", r.name},
          {"version", std::string(kVersion)},
          {"seed", r.seed},
          {"config", c.source},
          {"trees_override", opt.trees_override ? json(*opt.trees_override) : json(nullptr)},
          {"threads", opt.threads},
          {"n_train", r.n_train},
          {"n_test", r.n_test},
          {"predictors", std::move(preds)},
          {"files", std::move(files)},
          {"wall_clock_seconds", r.wall_seconds}};
}

/// Runs a parsed config. Forests are released as soon as their diagnostics
/// are done, so peak memory is one fitted predictor at a time.
inline ExperimentReport run_experiment(const ExperimentConfig& config, const RunOptions& opt = {}) {
  if (config.large && !opt.allow_large)
    throw ConfigError("config '" + config.name + "' is marked large; rerun with --large");
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t seed = opt.seed.value_or(config.seed);
  const fs::path out_dir = opt.output_dir.value_or(config.output_dir);

  ExperimentReport report;
  report.name = config.name;
  report.seed = seed;
  const auto [train, test] = make_data(config, seed);
  report.n_train = train.rows();
  report.n_test = test.rows();

  auto wants = [](const auto& diag, const std::string& name) {
    return diag && std::find(diag->predictors.begin(), diag->predictors.end(), name) !=
                       diag->predictors.end();
  };

  std::string metrics_csv = metrics_csv_header();
  std::string importance_csv = importance_csv_header();
  std::string profile_csv = usage_profile_csv_header();
  std::string leaf_csv = leaf_usage_csv_header(config.usage ? config.usage->watched
                                                            : std::vector<std::size_t>{});
  std::string summary_csv = "predictor,statistic,value\n";
  std::string screen_csv = "predictor,kind,item,importance,leaf_usage,discrepancy\n";
  std::vector<std::vector<double>> predictions;

  for (const auto& pc : config.predictors) {
    PredictorResult res;
    res.name = pc.name;
    res.type = kind_name(pc.kind);
    forest::ForestParams fp = pc.forest;
    fp.seed = derive_seed(seed, "predictor:" + pc.name);
    if (opt.trees_override) fp.n_trees = std::min(fp.n_trees, *opt.trees_override);
    auto fallback = pc.fallback_trees;
    if (fallback && opt.trees_override) fallback = std::min(*fallback, *opt.trees_override);

    std::optional<diagnostics::ImportanceReport> imp;
    std::optional<diagnostics::UsageReport> usage;
    auto diagnose = [&](const auto& predictor) {
      predictions.push_back(diagnostics::predict_all(predictor, test, opt.threads));
      res.metrics = diagnostics::metrics(predictions.back(), test.response());
      if (wants(config.importance, pc.name)) {
        diagnostics::ImportanceOptions io;
        io.n_permutations = config.importance->n_permutations;
        io.loss = config.importance->loss;
        io.seed = derive_seed(seed, "importance:" + pc.name);
        io.threads = opt.threads;
        imp = diagnostics::permutation_importance(predictor, test, io);
      }
    };
    auto timed = [](auto&& fit) {
      const auto t0 = std::chrono::steady_clock::now();
      auto value = fit();
      return std::pair{std::move(value),
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    };

    switch (pc.kind) {
      case PredictorKind::kForest: {
        auto [f, secs] = timed([&] { return forest::fit_forest(train, fp, opt.threads); });
        res.fit_seconds = secs;
        diagnose(f);
        if (wants(config.usage, pc.name))
          usage = diagnostics::usage_statistics(f.trees(), config.usage->watched, train);
        break;
      }
      case PredictorKind::kArmedForest: {
        const auto arm = forest::ArmFunction::parse(pc.arm, train.cols());
        auto [f, secs] = timed(
            [&] { return forest::fit_armed_forest(train, arm, fp, opt.threads, fallback); });
        res.fit_seconds = secs;
        res.arm_notes = f.notes();
        diagnose(f);
        if (wants(config.usage, pc.name)) {
          diagnostics::UsageAccumulator acc(train.cols(), config.usage->watched);
          for (const auto& [label, af] : f.arms())
            for (const auto& t : af.trees()) acc.add(t);
          usage = acc.finish();
        }
        break;
      }
      case PredictorKind::kOracle:
      case PredictorKind::kMarginalOracle: {
        const auto spec = oracle::OracleSpec::from(std::get<Model8Config>(config.model).params);
        if (pc.kind == PredictorKind::kOracle)
          diagnose(oracle::OptimalPredictor(spec));
        else
          diagnose(oracle::MarginalPredictor(spec));
        break;
      }
    }

    metrics_csv += metrics_csv_row(res.name, res.type, res.metrics);
    if (imp) {
      importance_csv += importance_csv_rows(pc.name, *imp);
      report.importance.emplace_back(pc.name, std::move(*imp));
    }
    if (usage) {
      profile_csv += usage_profile_csv_rows(pc.name, *usage);
      leaf_csv += leaf_usage_csv_rows(pc.name, *usage);
      summary_csv += usage_summary_csv_rows(pc.name, *usage);
      report.usage.emplace_back(pc.name, std::move(*usage));
    }
    report.predictors.push_back(std::move(res));
  }

  // Screen every predictor that has both reports.
  for (const auto& [name, ir] : report.importance)
    for (const auto& [uname, ur] : report.usage)
      if (uname == name) {
        auto s = diagnostics::discrepancy_screen(ir, ur, {}, &train);
        screen_csv += screen_csv_rows(name, s);
        report.screens.emplace_back(name, std::move(s));
      }

  if (opt.write_files) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "': " + ec.message());
    std::string pred_csv = "row,y";
    for (const auto& p : config.predictors) pred_csv += "," + p.name;
    pred_csv += "\n";
    const auto y = test.response();
    for (std::size_t i = 0; i < test.rows(); ++i) {
      pred_csv += std::to_string(i + 1) + "," + fmt(y[i]);
      for (const auto& col : predictions) pred_csv += "," + fmt(col[i]);
      pred_csv += "\n";
    }
    const std::pair<const char*, const std::string*> outputs[] = {
        {"metrics.csv", &metrics_csv},       {"importance.csv", &importance_csv},
        {"usage_profile.csv", &profile_csv}, {"leaf_usage.csv", &leaf_csv},
        {"usage_summary.csv", &summary_csv}, {"screen.csv", &screen_csv},
        {"predictions.csv", &pred_csv}};
    for (const auto& [file, text] : outputs) {
      write_text(out_dir / file, *text);
      report.files.push_back(out_dir / file);
    }
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (opt.write_files) io::save_json((out_dir / "manifest.json").string(), manifest_json(config, report, opt), 2);
  return report;
}

}  // namespace hiddenrf::experiment

#endif  // HIDDENRF_EXPERIMENT_HPP_

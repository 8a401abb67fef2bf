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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hiddenrf/experiment.hpp"

using namespace hiddenrf;
using namespace hiddenrf::experiment;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(HIDDENRF_SOURCE_DIR) / "configs";

json small_config() {
  return json::parse(R"({
    "name": "small",
    "seed": 7,
    "model": {"type": "model8", "beta": "negative_alpha"},
    "n_train": 300,
    "n_test": 120,
    "predictors": [
      {"name": "rf", "type": "forest", "n_trees": 4, "mtry": 3},
      {"name": "armed", "type": "armed_forest", "arm": "delta_x1_x2", "n_trees": 3, "fallback_trees": 2},
      {"name": "oracle", "type": "oracle"},
      {"name": "marginal", "type": "marginal_oracle"}
    ],
    "diagnostics": {
      "importance": {"predictors": ["rf", "armed", "oracle"], "n_permutations": 5},
      "usage": {"predictors": ["rf", "armed"], "watched": [1, 2]}
    }
  })");
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool has_issue(const std::vector<ConfigIssue>& issues, const std::string& field) {
  for (const auto& i : issues)
    if (i.field == field) return true;
  return false;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

const char* kOutputs[] = {"metrics.csv",       "importance.csv", "usage_profile.csv",
                          "leaf_usage.csv",    "usage_summary.csv", "screen.csv",
                          "predictions.csv"};

}  // namespace

// ---------------------------------------------------------------------------
// Validation

TEST(Config, BundledConfigsValidate) {
  std::size_t seen = 0;
  for (const auto& entry : fs::directory_iterator(kConfigs)) {
    if (entry.path().extension() != ".json") continue;
    ++seen;
    const auto issues = validate_config(entry.path());
    EXPECT_TRUE(issues.empty()) << entry.path() << "\n" << describe(issues);
    EXPECT_NO_THROW(load_config(entry.path()));
  }
  EXPECT_EQ(seen, 9u);
}

TEST(Config, LargeFlagsMatchRowCounts) {
  for (const char* name : {"table1_n200k", "table1_n500k"})
    EXPECT_TRUE(load_config(kConfigs / (std::string(name) + ".json")).large) << name;
  for (const char* name : {"table1_n10k", "table1_n100k", "figure3_usage_beta_3q"})
    EXPECT_FALSE(load_config(kConfigs / (std::string(name) + ".json")).large) << name;
}

TEST(Config, ParsesTheSmallConfig) {
  const auto c = parse_config(small_config());
  EXPECT_EQ(c.name, "small");
  EXPECT_EQ(c.seed, 7u);
  ASSERT_TRUE(std::holds_alternative<Model8Config>(c.model));
  EXPECT_EQ(std::get<Model8Config>(c.model).params.beta[0], -0.125);
  ASSERT_EQ(c.predictors.size(), 4u);
  EXPECT_EQ(c.predictors[1].kind, PredictorKind::kArmedForest);
  EXPECT_EQ(c.predictors[1].fallback_trees, std::optional<std::size_t>(2));
  EXPECT_EQ(c.usage->watched, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(c.importance->n_permutations, 5u);
  EXPECT_EQ(c.output_dir, fs::path("out/small"));
}

TEST(Config, ReportsFieldLevelIssues) {
  auto doc = small_config();
  doc["n_train"] = 0;
  EXPECT_TRUE(has_issue(validate_config(doc), "n_train"));
  EXPECT_THROW(parse_config(doc), ConfigError);

  doc = small_config();
  doc["model"] = json::parse(R"({"type": "model3", "d1": 1, "d2": 2, "d3": 2})");
  doc["predictors"] = json::parse(
      R"([{"name": "a", "type": "armed_forest", "arm": "delta_x1_x9"}])");
  doc.erase("diagnostics");
  EXPECT_TRUE(has_issue(validate_config(doc), "predictors[0].arm"));

  doc = small_config();
  doc["predictors"][0]["mtry"] = 11;
  doc["predictors"][0]["colour"] = "red";
  doc["diagnostics"]["usage"]["watched"] = json::array({0, 3});
  doc["diagnostics"]["importance"]["predictors"].push_back("nobody");
  const auto issues = validate_config(doc);
  EXPECT_TRUE(has_issue(issues, "predictors[0].mtry"));
  EXPECT_TRUE(has_issue(issues, "predictors[0].colour"));
  EXPECT_TRUE(has_issue(issues, "diagnostics.usage.watched[0]"));
  EXPECT_TRUE(has_issue(issues, "diagnostics.importance.predictors[3]"));

  doc = small_config();
  doc["model"] = json::parse(R"({"type": "model3"})");
  EXPECT_TRUE(has_issue(validate_config(doc), "predictors[2].type"));

  doc = small_config();
  doc["diagnostics"]["usage"]["predictors"] = json::array({"oracle"});
  EXPECT_TRUE(has_issue(validate_config(doc), "diagnostics.usage.predictors"));

  doc = small_config();
  doc["predictors"][1]["name"] = "rf";
  EXPECT_TRUE(has_issue(validate_config(doc), "predictors[1].name"));

  EXPECT_TRUE(has_issue(validate_config(json::parse("{}")), "seed"));
  EXPECT_THROW(validate_config(fs::path("/no/such/config.json")), IoError);
}

// ---------------------------------------------------------------------------
// Running

TEST(Run, WritesEveryOutputFile) {
  TempDir dir("hiddenrf_experiment_files");
  RunOptions opt;
  opt.threads = 1;
  opt.output_dir = dir.path();
  const auto r = run_experiment(parse_config(small_config()), opt);
  for (const char* f : kOutputs) EXPECT_TRUE(fs::exists(dir.path() / f)) << f;
  ASSERT_TRUE(fs::exists(dir.path() / "manifest.json"));
  const auto manifest = io::load_json((dir.path() / "manifest.json").string());
  EXPECT_EQ(manifest["seed"], 7);
  EXPECT_EQ(manifest["config"], small_config());
  EXPECT_EQ(manifest["predictors"].size(), 4u);
  EXPECT_TRUE(manifest.contains("wall_clock_seconds"));
  EXPECT_EQ(manifest["predictors"][1]["arms"].size(), 2u);

  EXPECT_EQ(r.predictors.size(), 4u);
  EXPECT_EQ(r.importance.size(), 3u);
  EXPECT_EQ(r.usage.size(), 2u);
  EXPECT_EQ(r.screens.size(), 2u);
  EXPECT_EQ(r.n_train, 300u);
  const auto metrics = slurp(dir.path() / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "predictor,type,mse,mae,explained_variance");
  const auto preds = slurp(dir.path() / "predictions.csv");
  EXPECT_EQ(preds.substr(0, preds.find('\n')), "row,y,rf,armed,oracle,marginal");
  EXPECT_EQ(std::count(preds.begin(), preds.end(), '\n'), 121);
  // Oracle importance of the agreement pair is positive and of noise-free x' block nonzero.
  for (const auto& [name, imp] : r.importance)
    if (name == "oracle") EXPECT_GT(imp.variables[0].importance, 0.0);
}

TEST(Run, OutputsAreByteIdenticalAcrossRunsAndThreads) {
  TempDir a("hiddenrf_experiment_a");
  TempDir b("hiddenrf_experiment_b");
  const auto config = parse_config(small_config());
  RunOptions oa;
  oa.threads = 1;
  oa.output_dir = a.path();
  RunOptions ob;
  ob.threads = 4;
  ob.output_dir = b.path();
  run_experiment(config, oa);
  run_experiment(config, ob);
  for (const char* f : kOutputs) EXPECT_EQ(slurp(a.path() / f), slurp(b.path() / f)) << f;
}

TEST(Run, TinySingleTreeRunIsReproducible) {
  auto doc = small_config();
  doc["n_train"] = 8;
  doc["n_test"] = 8;
  for (auto& p : doc["predictors"])
    if (p.contains("n_trees")) p["n_trees"] = 1;
  doc["predictors"][1]["fallback_trees"] = 1;
  const auto config = parse_config(doc);
  TempDir a("hiddenrf_experiment_tiny_a");
  TempDir b("hiddenrf_experiment_tiny_b");
  RunOptions opt;
  opt.threads = 1;
  opt.output_dir = a.path();
  run_experiment(config, opt);
  opt.output_dir = b.path();
  run_experiment(config, opt);
  for (const char* f : kOutputs) EXPECT_EQ(slurp(a.path() / f), slurp(b.path() / f)) << f;
}

TEST(Run, SeedOverrideChangesData) {
  const auto config = parse_config(small_config());
  RunOptions opt;
  opt.write_files = false;
  opt.threads = 1;
  const auto r1 = run_experiment(config, opt);
  opt.seed = 8;
  const auto r2 = run_experiment(config, opt);
  EXPECT_EQ(r2.seed, 8u);
  EXPECT_NE(r1.result("oracle").metrics.mse, r2.result("oracle").metrics.mse);
  EXPECT_THROW(r1.result("nobody"), DomainError);
}

TEST(Run, LargeConfigsNeedPermission) {
  auto doc = small_config();
  doc["large"] = true;
  const auto config = parse_config(doc);
  RunOptions opt;
  opt.write_files = false;
  opt.threads = 1;
  EXPECT_THROW(run_experiment(config, opt), ConfigError);
  opt.allow_large = true;
  EXPECT_NO_THROW(run_experiment(config, opt));
}

TEST(Run, TreeOverrideCapsForests) {
  auto doc = small_config();
  doc["predictors"][0]["n_trees"] = 50;
  doc.erase("diagnostics");
  const auto config = parse_config(doc);
  RunOptions opt;
  opt.threads = 1;
  opt.trees_override = 2;
  TempDir dir("hiddenrf_experiment_override");
  opt.output_dir = dir.path();
  run_experiment(config, opt);
  const auto manifest = io::load_json((dir.path() / "manifest.json").string());
  EXPECT_EQ(manifest["trees_override"], 2);
  // Absent diagnostics still produce header-only files.
  EXPECT_EQ(slurp(dir.path() / "importance.csv"), importance_csv_header());
}

TEST(Run, Model3AndCsvSources) {
  TempDir dir("hiddenrf_experiment_sources");
  auto doc = json::parse(R"({
    "name": "m3", "seed": 3,
    "model": {"type": "model3", "d1": 1, "d2": 1, "d3": 1},
    "n_train": 60, "n_test": 30,
    "predictors": [{"name": "rf", "type": "forest", "n_trees": 2, "mtry": 1}]
  })");
  RunOptions opt;
  opt.threads = 1;
  opt.write_files = false;
  const auto r = run_experiment(parse_config(doc), opt);
  EXPECT_EQ(r.n_test, 30u);

  Rng rng(1);
  const auto p = sim::Model8Params::standard(sim::BetaSetting::kThreeQuarterAlpha);
  save_csv((dir.path() / "train.csv").string(), sim::simulate_model8(50, p, rng));
  save_csv((dir.path() / "test.csv").string(), sim::simulate_model8(20, p, rng));
  fs::create_directories(dir.path() / "cfg");
  doc = json::parse(R"({
    "name": "csv", "seed": 3,
    "model": {"type": "csv", "train": "../train.csv", "test": "../test.csv"},
    "predictors": [{"name": "rf", "type": "forest", "n_trees": 2, "mtry": 10}]
  })");
  io::save_json((dir.path() / "cfg" / "c.json").string(), doc);
  const auto c = load_config(dir.path() / "cfg" / "c.json");
  const auto rc = run_experiment(c, opt);
  EXPECT_EQ(rc.n_train, 50u);
  EXPECT_EQ(rc.n_test, 20u);
  doc["predictors"][0]["mtry"] = 11;
  EXPECT_TRUE(has_issue(validate_config(doc, dir.path() / "cfg"), "predictors[0].mtry"));
  doc["model"]["train"] = "missing.csv";
  EXPECT_TRUE(has_issue(validate_config(doc, dir.path() / "cfg"), "model.train"));
}

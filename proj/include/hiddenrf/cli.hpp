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

// Command-line front end. Exit codes: 0 success, 1 other failure, 2 usage or
// config error, 3 simulation error, 4 I/O error.

#ifndef HIDDENRF_CLI_HPP_
#define HIDDENRF_CLI_HPP_

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "CLI11.hpp"
#include "hiddenrf/common.hpp"
#include "hiddenrf/dataset.hpp"
#include "hiddenrf/diagnostics.hpp"
#include "hiddenrf/experiment.hpp"
#include "hiddenrf/forest.hpp"
#include "hiddenrf/serialize.hpp"
#include "hiddenrf/sim.hpp"

namespace hiddenrf::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kSimulation = 3, kIo = 4 };

namespace fs = std::filesystem;
using Model = std::variant<forest::Forest, forest::ArmedForest>;

inline Model load_model(const std::string& path) {
  const auto doc = io::load_json(path);
  const auto format = doc.value("format", std::string());
  if (format == "hiddenrf.forest") return io::forest_from_json(doc);
  if (format == "hiddenrf.armed_forest") return io::armed_forest_from_json(doc);
  throw IoError("'" + path + "' is not a saved forest");
}

inline std::vector<std::size_t> parse_variable_list(const std::string& text, std::size_t d) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty() && (item[0] == 'x' || item[0] == 'X')) item.erase(0, 1);
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size() || v < 1 || v > d)
      throw ConfigError("bad variable '" + item + "' (expected 1.." + std::to_string(d) + ")");
    out.push_back(v - 1);
  }
  if (out.empty()) throw ConfigError("no variables given");
  return out;
}

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  unsigned threads = default_thread_count();
  std::string output_dir = ".";
  bool large = false;
};

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

/// Runs the CLI; `out` receives results, `err` diagnostics.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Random forests, hidden predictors and diagnostics", "hiddenrf"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--seed", g.seed, "Master seed (defaults to 1, or the config's seed)");
  app.add_option("--threads", g.threads, "Worker threads (default: HIDDENRF_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  app.add_option("--output-dir", g.output_dir, "Directory for written files");
  app.add_flag("--large", g.large, "Allow configs marked large");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Draw a dataset and write it as CSV");
  std::string model = "model8";
  std::string beta = "three_quarter_alpha";
  std::size_t n = 0;
  std::size_t d1 = 2, d2 = 3, d3 = 5;
  bool independent = false;
  std::string sim_out;
  sim_cmd->add_option("--model", model, "model8 or model3")
      ->check(CLI::IsMember({"model8", "model3"}));
  sim_cmd->add_option("--beta", beta, "model8 beta: three_quarter_alpha or negative_alpha")
      ->check(CLI::IsMember({"three_quarter_alpha", "negative_alpha"}));
  sim_cmd->add_option("-n,--rows", n, "Number of rows")->required()->check(CLI::PositiveNumber);
  sim_cmd->add_option("--d1", d1, "model3 X1 block size")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--d2", d2, "model3 X2 block size")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--d3", d3, "model3 X' block size")->check(CLI::PositiveNumber);
  sim_cmd->add_flag("--independent", independent, "model3 with the perturbation switched off");
  sim_cmd->add_option("-o,--output", sim_out, "CSV path (default <output-dir>/data.csv)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Fit a forest or an armed forest");
  std::string train_data, train_out, arm;
  std::size_t trees = 1000, min_node = 5;
  std::optional<std::size_t> mtry, fallback_trees;
  train_cmd->add_option("--data", train_data, "Training CSV")->required();
  train_cmd->add_option("--arm", arm, "Arm spec (e.g. delta_x1_x2); omit for a plain forest");
  train_cmd->add_option("--trees", trees, "Number of trees")->check(CLI::PositiveNumber);
  train_cmd->add_option("--mtry", mtry, "Candidate features per split (default d/3)")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--min-node-distinct", min_node, "Smallest splittable node")
      ->check(CLI::Range(2, 1 << 30));
  train_cmd->add_option("--fallback-trees", fallback_trees, "Trees in an armed forest's fallback")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("-o,--output", train_out, "Model path (default <output-dir>/model.json)");

  // evaluate / importance / usage share --model and --data
  auto* eval_cmd = app.add_subcommand("evaluate", "Test-set mse, mae and explained variance");
  auto* imp_cmd = app.add_subcommand("importance", "Permutation importance on a test set");
  auto* usage_cmd = app.add_subcommand("usage", "Variable-usage statistics of a fitted forest");
  std::string model_path, data_path;
  for (auto* c : {eval_cmd, imp_cmd, usage_cmd}) {
    c->add_option("--model", model_path, "Saved model JSON")->required();
    c->add_option("--data", data_path, c == usage_cmd ? "Training CSV" : "Test CSV")->required();
  }
  std::size_t permutations = 1000;
  std::string loss = "squared";
  imp_cmd->add_option("--permutations", permutations, "Permutations per variable")
      ->check(CLI::PositiveNumber);
  imp_cmd->add_option("--loss", loss, "squared or absolute")
      ->check(CLI::IsMember({"squared", "absolute"}));
  std::string watched = "1,2";
  usage_cmd->add_option("--watched", watched, "Comma-separated 1-based variables");

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "Config-driven experiments");
  exp_cmd->require_subcommand(1);
  auto* exp_run = exp_cmd->add_subcommand("run", "Run a config");
  auto* exp_validate = exp_cmd->add_subcommand("validate", "Check a config without running it");
  std::string config_path;
  std::optional<std::size_t> trees_override;
  bool no_output_dir_override = true;
  exp_run->add_option("config", config_path, "Config JSON")->required();
  exp_run->add_option("--trees", trees_override, "Cap every forest at this many trees")
      ->check(CLI::PositiveNumber);
  exp_validate->add_option("config", config_path, "Config JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion& e) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfig;
  }
  no_output_dir_override = app.count("--output-dir") == 0;
  const std::uint64_t seed = g.seed.value_or(1);

  try {
    if (*sim_cmd) {
      Rng rng(seed);
      Dataset data = [&] {
        if (model == "model8") {
          const auto p = sim::Model8Params::standard(beta == "negative_alpha"
                                                         ? sim::BetaSetting::kNegativeAlpha
                                                         : sim::BetaSetting::kThreeQuarterAlpha);
          return sim::simulate_model8(n, p, rng);
        }
        experiment::Model3Config m3{d1, d2, d3, 1.0, 1.0, 1.0, independent};
        return sim::simulate_model3(n, m3.spec(), sim::additive_response(), rng);
      }();
      const fs::path path = sim_out.empty() ? fs::path(g.output_dir) / "data.csv" : fs::path(sim_out);
      if (path.has_parent_path()) ensure_dir(path.parent_path());
      save_csv(path.string(), data);
      out << "wrote " << data.rows() << " rows x " << data.cols() << " features to " << path.string()
          << "\n";
      return kOk;
    }

    if (*train_cmd) {
      const Dataset data = load_csv(train_data);
      forest::ForestParams p;
      p.n_trees = trees;
      p.mtry = mtry;
      p.min_node_distinct = min_node;
      p.seed = seed;
      p.validate(data.cols());
      const fs::path path =
          train_out.empty() ? fs::path(g.output_dir) / "model.json" : fs::path(train_out);
      if (path.has_parent_path()) ensure_dir(path.parent_path());
      if (arm.empty()) {
        io::save_json(path.string(), io::to_json(forest::fit_forest(data, p, g.threads)));
      } else {
        const auto fn = forest::ArmFunction::parse(arm, data.cols());
        io::save_json(path.string(),
                      io::to_json(forest::fit_armed_forest(data, fn, p, g.threads, fallback_trees)));
      }
      out << "wrote model to " << path.string() << "\n";
      return kOk;
    }

    if (*eval_cmd || *imp_cmd || *usage_cmd) {
      const Model m = load_model(model_path);
      const Dataset data = load_csv(data_path);
      const fs::path dir(g.output_dir);
      ensure_dir(dir);
      if (*eval_cmd) {
        const auto pred = std::visit(
            [&](const auto& f) { return diagnostics::predict_all(f, data, g.threads); }, m);
        const auto r = diagnostics::metrics(pred, data.response());
        const std::string row = experiment::metrics_csv_row(
            fs::path(model_path).stem().string(), std::holds_alternative<forest::Forest>(m)
                                                      ? "forest" : "armed_forest", r);
        experiment::write_text(dir / "metrics.csv", experiment::metrics_csv_header() + row);
        std::string pcsv = "row,y,prediction\n";
        const auto y = data.response();
        for (std::size_t i = 0; i < pred.size(); ++i)
          pcsv += std::to_string(i + 1) + "," + format_double(y[i]) + "," + format_double(pred[i]) + "\n";
        experiment::write_text(dir / "predictions.csv", pcsv);
        out << "mse " << format_double(r.mse) << "\nmae " << format_double(r.mae)
            << "\nexplained_variance "
            << (r.explained_variance ? format_double(*r.explained_variance) : std::string("NA"))
            << "\n";
        return kOk;
      }
      if (*imp_cmd) {
        diagnostics::ImportanceOptions o;
        o.n_permutations = permutations;
        o.seed = seed;
        o.threads = g.threads;
        o.loss = loss == "absolute" ? diagnostics::Loss::kAbsolute : diagnostics::Loss::kSquared;
        const auto r =
            std::visit([&](const auto& f) { return diagnostics::permutation_importance(f, data, o); }, m);
        const auto name = fs::path(model_path).stem().string();
        experiment::write_text(dir / "importance.csv", experiment::importance_csv_header() +
                                                           experiment::importance_csv_rows(name, r));
        out << "e_hat " << format_double(r.e_hat) << "\n";
        for (const auto& v : r.variables)
          out << "x" << v.variable + 1 << " " << format_double(v.importance) << "\n";
        return kOk;
      }
      const auto vars = parse_variable_list(watched, data.cols());
      diagnostics::UsageAccumulator acc(data.cols(), vars);
      if (const auto* f = std::get_if<forest::Forest>(&m)) {
        for (const auto& t : f->trees()) acc.add(t);
      } else {
        for (const auto& [label, af] : std::get<forest::ArmedForest>(m).arms())
          for (const auto& t : af.trees()) acc.add(t);
      }
      const auto r = acc.finish();
      const auto name = fs::path(model_path).stem().string();
      experiment::write_text(dir / "usage_profile.csv", experiment::usage_profile_csv_header() +
                                                            experiment::usage_profile_csv_rows(name, r));
      experiment::write_text(dir / "leaf_usage.csv", experiment::leaf_usage_csv_header(vars) +
                                                         experiment::leaf_usage_csv_rows(name, r));
      experiment::write_text(dir / "usage_summary.csv", "predictor,statistic,value\n" +
                                                            experiment::usage_summary_csv_rows(name, r));
      out << "mid_construction_proportion " << format_double(r.mid_construction_proportion())
          << "\nmedian_joint_leaf_proportion " << format_double(r.median_joint_leaf_proportion())
          << "\ndata_fraction_joint " << format_double(r.data_fraction_joint) << "\n";
      return kOk;
    }

    if (*exp_validate) {
      const auto issues = experiment::validate_config(fs::path(config_path));
      if (issues.empty()) {
        out << config_path << ": ok\n";
        return kOk;
      }
      err << config_path << ": " << issues.size() << " problem(s)\n" << experiment::describe(issues);
      return kConfig;
    }

    if (*exp_run) {
      const auto config = experiment::load_config(fs::path(config_path));
      experiment::RunOptions o;
      o.threads = g.threads;
      o.allow_large = g.large;
      o.trees_override = trees_override;
      o.seed = g.seed;
      if (!no_output_dir_override) o.output_dir = fs::path(g.output_dir);
      const auto r = experiment::run_experiment(config, o);
      for (const auto& p : r.predictors)
        out << p.name << " mse " << format_double(p.metrics.mse) << "\n";
      out << "wrote " << r.files.size() + 1 << " files to "
          << (o.output_dir ? *o.output_dir : config.output_dir).string() << "\n";
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const SimulationError& e) {
    err << "simulation error: " << e.what() << "\n";
    return kSimulation;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace hiddenrf::cli

#endif  // HIDDENRF_CLI_HPP_

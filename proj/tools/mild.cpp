// Copyright 2026 The MILD Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line driver: gen, train, eval, sweep, check.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "mild/checks.hpp"
#include "mild/experiment.hpp"
#include "mild/io.hpp"
#include "mild/oracle.hpp"

namespace fs = std::filesystem;
using namespace mild;

namespace {

struct ConfigOptions {
  std::string config_path;
  std::map<std::string, std::string> overrides;
};

void add_config_options(CLI::App* app, ConfigOptions& options) {
  app->add_option("--config", options.config_path, "key = value config file");
  for (const std::string& key : config_keys())
    app->add_option("--" + key, options.overrides[key], "overrides " + key);
}

ExperimentConfig load_config(const ConfigOptions& options,
                             const fs::path& base = {}) {
  KeyValueFile file;
  if (!base.empty()) {
    // Data manifests also carry bookkeeping keys such as the normalizer.
    const KeyValueFile manifest = KeyValueFile::load(base);
    for (const std::string& key : config_keys())
      if (manifest.has(key)) file.set(key, manifest.get(key));
  }
  if (!options.config_path.empty()) {
    const KeyValueFile loaded = KeyValueFile::load(options.config_path);
    for (const auto& [k, v] : loaded.entries()) file.set(k, v);
  }
  for (const auto& [k, v] : options.overrides)
    if (!v.empty()) file.set(k, v);
  return config_from_key_values(file);
}

int num_classes(const ExperimentConfig& config) {
  return config.generator == GeneratorKind::kLlm ? config.llm.n_choices
                                                 : config.setup.n_classes;
}

void write_split(const fs::path& dir, const std::string& split,
                 const GeneratedData& g) {
  write_text(dir / (split + "_dataset.csv"), dataset_to_csv(g.data));
  write_text(dir / (split + "_predictions.csv"), predictions_to_csv(g.panel));
  write_text(dir / (split + "_experts.csv"), experts_to_csv(g.panel));
  write_text(dir / (split + "_costs.csv"), costs_to_csv(g.costs));
}

struct LoadedSplit {
  Dataset data;
  CostTensor costs;
};

LoadedSplit read_split(const fs::path& dir, const std::string& split,
                       const ExperimentConfig& config, double normalizer) {
  LoadedSplit out;
  out.data = dataset_from_csv(read_csv(dir / (split + "_dataset.csv")),
                              num_classes(config));
  out.costs = costs_from_csv(read_csv(dir / (split + "_costs.csv")),
                             parse_cost_type(config.cost_type_name()), normalizer);
  return out;
}

int run_gen(const ConfigOptions& options, const std::string& out_dir) {
  const ExperimentConfig config = load_config(options);
  const fs::path dir = out_dir.empty() ? config.output_dir : fs::path(out_dir);
  fs::create_directories(dir);
  const SeedData data = generate_seed_data(config, config.seed);
  write_split(dir, "train", data.train);
  write_split(dir, "test", data.test);
  KeyValueFile manifest = config_to_key_values(config);
  manifest.set("normalizer", format_exact(data.train.costs.normalizer));
  write_text(dir / "manifest.txt", manifest.to_string());
  std::cout << "wrote " << data.train.data.size() << " train and "
            << data.test.data.size() << " test samples to " << dir.string()
            << '\n';
  return kExitOk;
}

int run_train(const ConfigOptions& options, const std::string& data_dir,
              const std::string& method_name, const std::string& out_dir) {
  const fs::path dir(data_dir);
  const ExperimentConfig config = load_config(options, dir / "manifest.txt");
  const double normalizer =
      KeyValueFile::load(dir / "manifest.txt").get_real("normalizer", 1.0);
  const LoadedSplit split = read_split(dir, "train", config, normalizer);
  const Method method = parse_method(method_name);
  const TrainResult result =
      train(split.data, split.costs, config.scheme,
            seeded_train_config(config, config.seed), method);
  const fs::path out = out_dir.empty() ? dir : fs::path(out_dir);
  fs::create_directories(out);
  write_text(out / "router.json", router_to_json(result.router));
  write_text(out / "trace.csv", trace_to_csv(result.trace));
  std::cout << "rho:";
  for (int k = 0; k < result.rhos.size(); ++k) std::cout << ' ' << format_real(result.rhos[k]);
  std::cout << "\nfinal objective: " << format_real(result.trace.back().objective)
            << "\nholdout dl: " << format_real(result.trace.back().val_dl) << '\n';
  return kExitOk;
}

int run_eval(const std::string& router_path, const std::string& data_dir,
             const std::string& split_name, bool oracle) {
  const fs::path dir(data_dir);
  ConfigOptions none;
  const ExperimentConfig config = load_config(none, dir / "manifest.txt");
  const double normalizer =
      KeyValueFile::load(dir / "manifest.txt").get_real("normalizer", 1.0);
  const LoadedSplit split = read_split(dir, split_name, config, normalizer);
  EvalReport report;
  if (oracle) {
    const BayesResult bayes =
        bayes_router(instance_from_dataset(split.data, split.costs));
    report.num_samples = split.data.size();
    report.deferral_loss = bayes.deferral_loss;
    report.ratios = bayes.ratios;
  } else {
    const Router router = router_from_json(read_text(router_path));
    report = evaluate(router, split.data, split.costs);
  }
  std::cout << report.to_json() << '\n';
  return kExitOk;
}

int run_sweep(const ConfigOptions& options) {
  const ExperimentConfig config = load_config(options);
  const ExperimentResult result = run_experiment(config);
  std::cout << report_to_csv(result.rows, config.num_experts());
  if (result.exit_code != kExitOk)
    std::cerr << "training diverged on at least one seed; see report.csv\n";
  return result.exit_code;
}

int run_check(const std::string& tier, std::uint64_t seed) {
  const auto results = run_checks(parse_check_tier(tier), seed, &std::cout);
  for (const SuiteResult& r : results)
    if (!r.passed()) return kExitCheckFailed;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning to defer under expert imbalance"};
  app.require_subcommand(1);

  ConfigOptions gen_options, train_options, sweep_options;
  std::string gen_out, train_data, train_method = "MILD", train_out;
  std::string eval_router, eval_data, eval_split = "test";
  bool eval_oracle = false;
  std::string check_tier = "fast";
  std::uint64_t check_seed = 1;

  CLI::App* gen = app.add_subcommand("gen", "generate train and test data");
  add_config_options(gen, gen_options);
  gen->add_option("--out", gen_out, "output directory (default output_dir)");

  CLI::App* train_cmd = app.add_subcommand("train", "train a router on generated data");
  add_config_options(train_cmd, train_options);
  train_cmd->add_option("--data", train_data, "directory written by gen")->required();
  train_cmd->add_option("--method", train_method, "MILD or TDEF");
  train_cmd->add_option("--out", train_out, "output directory (default --data)");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a router");
  eval->add_option("--router", eval_router, "router.json written by train");
  eval->add_option("--data", eval_data, "directory written by gen")->required();
  eval->add_option("--split", eval_split, "train or test");
  eval->add_flag("--oracle", eval_oracle, "evaluate the Bayes router instead");

  CLI::App* sweep = app.add_subcommand("sweep", "multi-seed experiment");
  add_config_options(sweep, sweep_options);

  CLI::App* check = app.add_subcommand("check", "run the verification suites");
  check->add_option("--tier", check_tier, "fast or full");
  check->add_option("--seed", check_seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalidConfig;
  }

  try {
    if (gen->parsed()) return run_gen(gen_options, gen_out);
    if (train_cmd->parsed())
      return run_train(train_options, train_data, train_method, train_out);
    if (eval->parsed()) {
      if (!eval_oracle && eval_router.empty()) {
        std::cerr << "eval: --router or --oracle is required\n";
        return kExitInvalidConfig;
      }
      return run_eval(eval_router, eval_data, eval_split, eval_oracle);
    }
    if (sweep->parsed()) return run_sweep(sweep_options);
    if (check->parsed()) return run_check(check_tier, check_seed);
  } catch (const TrainingDiverged& e) {
    std::cerr << e.what() << '\n';
    return kExitDiverged;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitInvalidConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}

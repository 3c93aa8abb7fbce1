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

// Experiment driver: flat key-value configs, generate -> train -> evaluate
// pipelines per seed, and the comma-separated sweep report.

#ifndef MILD_EXPERIMENT_HPP_
#define MILD_EXPERIMENT_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mild/core.hpp"
#include "mild/io.hpp"
#include "mild/synth.hpp"
#include "mild/train.hpp"

namespace mild {

enum class GeneratorKind { kClasses, kLlm };

struct ExperimentConfig {
  GeneratorKind generator = GeneratorKind::kClasses;
  SetupSpec setup;          // seed is ignored; see derive_seed
  LlmAnalogSpec llm;        // generator = llm only; seed is ignored
  std::string llm_setting;  // "error_only" or "error_cost"
  int n_test = 5000;
  std::vector<Method> methods{Method::kMild, Method::kTdef, Method::kOracle};
  RewardScheme scheme = RewardScheme::kLemma1;
  TrainConfig train;        // seeds are ignored; see derive_seed
  int n_seeds = 5;
  std::uint64_t seed = 0;
  int threads = 0;          // 0: one per hardware thread
  std::filesystem::path output_dir = "out";

  void validate() const;
  std::string setup_name() const;
  std::string cost_type_name() const;
  int num_experts() const;
};

// Keys accepted in config files (and as CLI flags).
const std::vector<std::string>& config_keys();

// Unknown keys and malformed values throw InvalidInput.
ExperimentConfig config_from_key_values(const KeyValueFile& file);
KeyValueFile config_to_key_values(const ExperimentConfig& config);

// Stream `stream` of run seed `seed` (splitmix64 of the pair).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

enum DeriveStream : std::uint64_t {
  kTrainDataStream = 1,
  kTestDataStream = 2,
  kTrainerStream = 3,
  kFeatureMapStream = 4,
};

struct SeedData {
  GeneratedData train;
  GeneratedData test;
};

// Train and test draws for run seed `seed`.
SeedData generate_seed_data(const ExperimentConfig& config, std::uint64_t seed);

// Train config with the trainer and feature-map seeds derived from `seed`.
TrainConfig seeded_train_config(const ExperimentConfig& config,
                                std::uint64_t seed);

struct MethodOutcome {
  Method method = Method::kMild;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string status;  // "ok" or "diverged"
  EvalReport report;
  std::vector<TraceRow> trace;
  Vector rhos;
};

// One seed's pipeline for every configured method.
std::vector<MethodOutcome> run_seed(const ExperimentConfig& config,
                                    std::uint64_t seed);

struct ReportRow {
  std::string method;
  std::string setup;
  std::string cost_type;
  std::string seed;    // run seed, or "mean" on aggregate rows
  std::string status;  // ok, diverged, partial, failed
  std::optional<double> dl;
  std::optional<double> dl_std;  // aggregate rows only
  std::vector<std::optional<double>> ratios;
};

// Seed rows per method in seed order, each method closed by its aggregate
// row: mean DL with the sample standard deviation (n - 1) over ok seeds and
// mean ratios.
std::vector<ReportRow> assemble_report(const ExperimentConfig& config,
                                       const std::vector<MethodOutcome>& outcomes);

std::string report_to_csv(const std::vector<ReportRow>& rows, int num_experts);
std::vector<ReportRow> report_from_csv(const std::string& text);

enum ExitCode : int {
  kExitOk = 0,
  kExitInvalidConfig = 2,
  kExitDiverged = 3,
  kExitCheckFailed = 4,
};

struct ExperimentResult {
  std::vector<ReportRow> rows;
  std::vector<MethodOutcome> outcomes;
  int exit_code = kExitOk;
};

// Runs all seeds (concurrently when threads != 1) and writes report.csv,
// manifest.txt and traces/<method>_<seed>.csv under output_dir.
ExperimentResult run_experiment(const ExperimentConfig& config);

}  // namespace mild

#endif  // MILD_EXPERIMENT_HPP_

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

// Desk-scale generators for expert-imbalance experiments. Classes are
// isotropic Gaussian blobs with uniform priors; experts are specialists that
// cover a contiguous block of classes.

#ifndef MILD_SYNTH_HPP_
#define MILD_SYNTH_HPP_

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "mild/core.hpp"
#include "mild/oracle.hpp"

namespace mild {

enum class SetupKind { kSetupI, kSetupII, kSetupIII, kSevere, kCustom };

std::string to_string(SetupKind kind);
SetupKind parse_setup_kind(const std::string& text);

// Always right on covered classes, uniform over all c labels elsewhere (the
// true label included).
struct SyntheticFidelity {};

// Leaky specialists: right with covered_accuracy on covered classes and with
// leak_accuracy elsewhere; mistakes are uniform over the wrong labels.
struct RealFidelity {
  double covered_accuracy = 0.99;
  double leak_accuracy = 0.15;
};

using ExpertFidelity = std::variant<SyntheticFidelity, RealFidelity>;

struct SetupSpec {
  SetupKind setup = SetupKind::kSetupI;
  std::vector<double> custom_coverage;  // kCustom only
  int n_classes = 10;
  int n_samples = 1000;
  int dim = 2;
  double class_radius = 3.0;
  double class_std = 1.0;
  ExpertFidelity fidelity = SyntheticFidelity{};
  CostType cost_type = CostType::kErrorOnly;
  std::uint64_t seed = 0;

  std::vector<double> coverage() const;
};

struct GeneratedData {
  Dataset data;
  ExpertPanel panel;
  CostTensor costs;
};

// Coverage fractions of the built-in setups.
std::vector<double> setup_coverage(SetupKind kind);

// Contiguous 1-based class blocks, expert k taking round(c * frac_k) classes
// (cumulative rounding). Throws when a block would be empty.
std::vector<std::vector<int>> coverage_classes(
    const std::vector<double>& fractions, int n_classes);

// c x dim. dim == 2 (or dim < c): a circle of the given radius in the first
// two coordinates. dim >= c: radius times the standard basis.
Matrix class_means(int n_classes, int dim, double radius);

// p(y | x) under the uniform-prior Gaussian mixture, one row per sample.
Matrix class_posterior(const Matrix& features, const Matrix& means,
                       double class_std);

GeneratedData generate(const SetupSpec& spec);

// Three-expert routing analog with input regions. Region r holds a
// target_ratios(r) share of the samples and expert r is the cheapest expert
// on every one of them; the remaining correctness outcomes are drawn with
// `accuracy(r, k)` conditioned on that.
struct LlmAnalogSpec {
  Vector target_ratios;  // fractions (or percentages), one per expert
  Matrix accuracy;       // regions x experts
  Vector beta;
  int n_samples = 2000;
  int n_choices = 4;
  int dim = 2;
  double region_radius = 3.0;
  double region_std = 1.0;
  std::uint64_t seed = 0;
};

struct LlmAnalog {
  GeneratedData generated;
  std::vector<int> regions;  // 0-based
  Vector bayes_ratios;       // bayes_router ratios on the generated samples
};

// Error-only setting: targets (82.2, 12.8, 5.0), beta = 0.
LlmAnalogSpec llm_error_only_spec(int n_samples, std::uint64_t seed);
// Error plus inference cost: targets (31.2, 12.0, 56.8), beta = (1, .6, .1).
LlmAnalogSpec llm_error_cost_spec(int n_samples, std::uint64_t seed);

LlmAnalog generate_llm_analog(const LlmAnalogSpec& spec);

}  // namespace mild

#endif  // MILD_SYNTH_HPP_

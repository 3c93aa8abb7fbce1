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

#include "mild/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "mild/io.hpp"

namespace mild {
namespace {

int uniform_label(std::mt19937_64& rng, int n) {
  return std::uniform_int_distribution<int>(1, n)(rng);
}

// Uniform over [1, n] minus `exclude`.
int wrong_label(std::mt19937_64& rng, int n, int exclude) {
  const int draw = std::uniform_int_distribution<int>(1, n - 1)(rng);
  return draw >= exclude ? draw + 1 : draw;
}

// Largest-remainder split of n into shares proportional to `weights`.
std::vector<int> apportion(const Vector& weights, int n) {
  const double total = weights.sum();
  const auto k = static_cast<std::size_t>(weights.size());
  std::vector<int> counts(k);
  std::vector<std::pair<double, std::size_t>> rest;
  int used = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const double exact = n * weights(static_cast<Eigen::Index>(j)) / total;
    counts[j] = static_cast<int>(std::floor(exact));
    used += counts[j];
    rest.emplace_back(exact - counts[j], j);
  }
  std::stable_sort(rest.begin(), rest.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int i = 0; i < n - used; ++i) ++counts[rest[static_cast<std::size_t>(i)].second];
  return counts;
}

Vector normal_vector(std::mt19937_64& rng, int dim, double sd) {
  std::normal_distribution<double> normal(0.0, sd);
  Vector v(dim);
  for (int j = 0; j < dim; ++j) v(j) = normal(rng);
  return v;
}

}  // namespace

std::string to_string(SetupKind kind) {
  switch (kind) {
    case SetupKind::kSetupI: return "I";
    case SetupKind::kSetupII: return "II";
    case SetupKind::kSetupIII: return "III";
    case SetupKind::kSevere: return "severe";
    case SetupKind::kCustom: return "custom";
  }
  return "?";
}

SetupKind parse_setup_kind(const std::string& text) {
  if (text == "I" || text == "1") return SetupKind::kSetupI;
  if (text == "II" || text == "2") return SetupKind::kSetupII;
  if (text == "III" || text == "3") return SetupKind::kSetupIII;
  if (text == "severe") return SetupKind::kSevere;
  if (text == "custom") return SetupKind::kCustom;
  throw InvalidInput("unknown setup: " + text);
}

std::vector<double> setup_coverage(SetupKind kind) {
  switch (kind) {
    case SetupKind::kSetupI: return {0.7, 0.2, 0.1};
    case SetupKind::kSetupII: return {0.5, 0.2, 0.2, 0.1};
    case SetupKind::kSetupIII: return {0.4, 0.2, 0.2, 0.1, 0.1};
    case SetupKind::kSevere: return {0.9, 0.1};
    case SetupKind::kCustom: break;
  }
  throw InvalidInput("custom setups carry their own coverage");
}

std::vector<double> SetupSpec::coverage() const {
  return setup == SetupKind::kCustom ? custom_coverage : setup_coverage(setup);
}

std::vector<std::vector<int>> coverage_classes(
    const std::vector<double>& fractions, int n_classes) {
  if (fractions.size() < 2)
    throw InvalidInput("coverage: need at least two experts");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw InvalidInput("coverage: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw InvalidInput("coverage: fractions must sum to 1");
  std::vector<std::vector<int>> out;
  double cumulative = 0.0;
  int start = 1;
  for (double f : fractions) {
    cumulative += f;
    const int end = static_cast<int>(std::lround(cumulative * n_classes));
    if (end < start) {
      std::ostringstream msg;
      msg << "coverage: fraction " << f << " maps to no class out of "
          << n_classes;
      throw InvalidInput(msg.str());
    }
    std::vector<int> block(static_cast<std::size_t>(end - start + 1));
    std::iota(block.begin(), block.end(), start);
    out.push_back(std::move(block));
    start = end + 1;
  }
  return out;
}

Matrix class_means(int n_classes, int dim, double radius) {
  if (dim < 1 || n_classes < 1) throw InvalidInput("class_means: bad shape");
  Matrix means = Matrix::Zero(n_classes, dim);
  if (dim >= n_classes && n_classes > 2) {
    for (int y = 0; y < n_classes; ++y) means(y, y) = radius;
    return means;
  }
  if (dim < 2) {
    for (int y = 0; y < n_classes; ++y)
      means(y, 0) = radius * (2.0 * y / std::max(1, n_classes - 1) - 1.0);
    return means;
  }
  for (int y = 0; y < n_classes; ++y) {
    const double angle = 2.0 * std::numbers::pi * y / n_classes;
    means(y, 0) = radius * std::cos(angle);
    means(y, 1) = radius * std::sin(angle);
  }
  return means;
}

Matrix class_posterior(const Matrix& features, const Matrix& means,
                       double class_std) {
  Matrix post(features.rows(), means.rows());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    Vector logits(means.rows());
    for (Eigen::Index y = 0; y < means.rows(); ++y)
      logits(y) = -(features.row(i) - means.row(y)).squaredNorm() /
                  (2.0 * class_std * class_std);
    logits.array() -= logits.maxCoeff();
    Vector e = logits.array().exp();
    post.row(i) = (e / e.sum()).transpose();
  }
  return post;
}

GeneratedData generate(const SetupSpec& spec) {
  const std::vector<double> fractions = spec.coverage();
  const int c = spec.n_classes;
  if (c < 2) throw InvalidInput("generate: need at least two classes");
  if (spec.n_samples < 10 * c)
    throw InvalidInput("generate: need at least 10 samples per class");
  if (!(spec.class_std > 0.0)) throw InvalidInput("generate: class_std must be > 0");
  const auto blocks = coverage_classes(fractions, c);
  const int p = static_cast<int>(blocks.size());
  const int m = spec.n_samples;

  // covering(y) = expert whose block contains class y.
  std::vector<int> covering(static_cast<std::size_t>(c + 1), -1);
  for (int k = 0; k < p; ++k)
    for (int y : blocks[static_cast<std::size_t>(k)]) covering[static_cast<std::size_t>(y)] = k;

  const Matrix means = class_means(c, spec.dim, spec.class_radius);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  GeneratedData out;
  out.data.num_classes = c;
  out.data.features.resize(m, spec.dim);
  out.data.labels.resize(static_cast<std::size_t>(m));
  out.panel.predictions.resize(m, p);
  out.panel.coverage = blocks;
  out.panel.beta = Vector::Zero(p);
  if (spec.cost_type == CostType::kErrorPlusCost)
    for (int k = 0; k < p; ++k) out.panel.beta(k) = fractions[static_cast<std::size_t>(k)];

  const auto* real = std::get_if<RealFidelity>(&spec.fidelity);
  for (int i = 0; i < m; ++i) {
    const int y = uniform_label(rng, c);
    out.data.labels[static_cast<std::size_t>(i)] = y;
    out.data.features.row(i) =
        means.row(y - 1) + normal_vector(rng, spec.dim, spec.class_std).transpose();
    for (int k = 0; k < p; ++k) {
      const bool covered = covering[static_cast<std::size_t>(y)] == k;
      int prediction;
      if (real == nullptr) {
        prediction = covered ? y : uniform_label(rng, c);
      } else {
        const double acc = covered ? real->covered_accuracy : real->leak_accuracy;
        prediction = unit(rng) < acc ? y : wrong_label(rng, c, y);
      }
      out.panel.predictions(i, k) = prediction;
    }
  }
  out.data.conditional_label_dist =
      class_posterior(out.data.features, means, spec.class_std);
  out.data.validate();
  out.panel.validate(c);
  out.costs = costs_from_panel(out.data, out.panel, spec.cost_type);
  return out;
}

LlmAnalogSpec llm_error_only_spec(int n_samples, std::uint64_t seed) {
  LlmAnalogSpec spec;
  spec.target_ratios = Vector{{0.822, 0.128, 0.050}};
  spec.accuracy = Matrix{{0.90, 0.30, 0.20},
                         {0.85, 0.90, 0.20},
                         {0.88, 0.89, 0.90}};
  spec.beta = Vector::Zero(3);
  spec.n_samples = n_samples;
  spec.seed = seed;
  return spec;
}

LlmAnalogSpec llm_error_cost_spec(int n_samples, std::uint64_t seed) {
  LlmAnalogSpec spec;
  spec.target_ratios = Vector{{0.312, 0.120, 0.568}};
  spec.accuracy = Matrix{{0.98, 0.30, 0.05},
                         {0.90, 0.90, 0.30},
                         {0.95, 0.90, 0.85}};
  spec.beta = Vector{{1.0, 0.6, 0.1}};
  spec.n_samples = n_samples;
  spec.seed = seed;
  return spec;
}

LlmAnalog generate_llm_analog(const LlmAnalogSpec& spec) {
  const auto p = static_cast<int>(spec.beta.size());
  if (p < 2 || spec.target_ratios.size() != p || spec.accuracy.rows() != p ||
      spec.accuracy.cols() != p)
    throw InvalidInput("llm analog: one region and one beta per expert");
  if ((spec.target_ratios.array() < 0.0).any() || !(spec.target_ratios.sum() > 0.0))
    throw InvalidInput("llm analog: target ratios must be non-negative");
  if ((spec.accuracy.array() < 0.0).any() || (spec.accuracy.array() > 1.0).any())
    throw InvalidInput("llm analog: accuracies must be probabilities");
  if (spec.n_choices < 2) throw InvalidInput("llm analog: need >= 2 choices");
  const Vector target = spec.target_ratios / spec.target_ratios.sum();
  const int m = spec.n_samples;
  const std::vector<int> counts = apportion(target, m);

  ExpertPanel panel;
  panel.beta = spec.beta;
  panel.predictions.resize(m, p);
  Dataset data;
  data.num_classes = spec.n_choices;
  data.features.resize(m, spec.dim);
  data.labels.resize(static_cast<std::size_t>(m));
  const Matrix means = class_means(p, spec.dim, spec.region_radius);

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LlmAnalog out;
  Vector achieved = Vector::Zero(p);
  bool feasible = true;
  int i = 0;
  for (int r = 0; r < p; ++r) {
    for (int n = 0; n < counts[static_cast<std::size_t>(r)]; ++n, ++i) {
      const int y = uniform_label(rng, spec.n_choices);
      data.labels[static_cast<std::size_t>(i)] = y;
      data.features.row(i) =
          means.row(r) + normal_vector(rng, spec.dim, spec.region_std).transpose();
      out.regions.push_back(r);
      std::vector<bool> correct(static_cast<std::size_t>(p));
      bool accepted = false;
      int cheapest = 0;
      for (int attempt = 0; attempt < 1000 && !accepted; ++attempt) {
        Vector cost(p);
        for (int k = 0; k < p; ++k) {
          correct[static_cast<std::size_t>(k)] = unit(rng) < spec.accuracy(r, k);
          cost(k) = (correct[static_cast<std::size_t>(k)] ? 0.0 : 1.0) + spec.beta(k);
        }
        cheapest = 0;
        for (int k = 1; k < p; ++k)
          if (cost(k) <= cost(cheapest)) cheapest = k;
        accepted = cheapest == r;
      }
      achieved(cheapest) += 1.0;
      feasible = feasible && accepted;
      for (int k = 0; k < p; ++k)
        panel.predictions(i, k) = correct[static_cast<std::size_t>(k)]
                                      ? y
                                      : wrong_label(rng, spec.n_choices, y);
    }
  }
  if (!feasible) {
    std::ostringstream msg;
    msg << "llm analog: target ratios are infeasible under the given "
           "accuracies; achieved ratios";
    for (int k = 0; k < p; ++k) msg << ' ' << format_real(achieved(k) / m);
    throw InvalidInput(msg.str());
  }
  data.validate();
  panel.validate(spec.n_choices);
  out.generated.data = std::move(data);
  out.generated.panel = std::move(panel);
  out.generated.costs = costs_from_panel(
      out.generated.data, out.generated.panel,
      spec.beta.maxCoeff() > 0.0 ? CostType::kErrorPlusCost : CostType::kErrorOnly);
  const BayesResult bayes =
      bayes_router(instance_from_dataset(out.generated.data, out.generated.costs));
  out.bayes_ratios = bayes.ratios;
  if ((out.bayes_ratios - target).cwiseAbs().maxCoeff() > 0.01) {
    std::ostringstream msg;
    msg << "llm analog: Bayes ratios miss the targets by more than 1%:";
    for (int k = 0; k < p; ++k) msg << ' ' << format_real(out.bayes_ratios(k));
    throw InvalidInput(msg.str());
  }
  return out;
}

}  // namespace mild

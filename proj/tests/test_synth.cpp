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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mild/synth.hpp"

using namespace mild;
using doctest::Approx;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

bool covers(const std::vector<int>& classes, int label) {
  for (int c : classes)
    if (c == label) return true;
  return false;
}

// |observed - expected| within three binomial standard deviations.
bool within_3_sigma(double hits, double trials, double rate) {
  return std::abs(hits / trials - rate) <= 3.0 * std::sqrt(rate * (1 - rate) / trials);
}

}  // namespace

TEST_CASE("setup coverage") {
  CHECK(setup_coverage(SetupKind::kSetupI) == std::vector<double>{0.7, 0.2, 0.1});
  CHECK(setup_coverage(SetupKind::kSetupII) == std::vector<double>{0.5, 0.2, 0.2, 0.1});
  CHECK(setup_coverage(SetupKind::kSetupIII) ==
        std::vector<double>{0.4, 0.2, 0.2, 0.1, 0.1});
  CHECK(setup_coverage(SetupKind::kSevere) == std::vector<double>{0.9, 0.1});
  CHECK_THROWS_AS(setup_coverage(SetupKind::kCustom), InvalidInput);
  CHECK(parse_setup_kind("II") == SetupKind::kSetupII);
  CHECK(to_string(SetupKind::kSevere) == "severe");
  CHECK_THROWS_AS(parse_setup_kind("IV"), InvalidInput);

  const auto blocks = coverage_classes({0.7, 0.2, 0.1}, 10);
  CHECK(blocks == std::vector<std::vector<int>>{{1, 2, 3, 4, 5, 6, 7}, {8, 9}, {10}});
  CHECK(coverage_classes({0.9, 0.1}, 10)[1] == std::vector<int>{10});
  CHECK(coverage_classes({0.5, 0.5}, 3).size() == 2);
  CHECK_THROWS_AS(coverage_classes({0.7, 0.2, 0.1}, 5), InvalidInput);
  CHECK_THROWS_AS(coverage_classes({0.7, 0.2}, 10), InvalidInput);

  SetupSpec custom;
  custom.setup = SetupKind::kCustom;
  custom.custom_coverage = {0.6, 0.4};
  CHECK(custom.coverage() == std::vector<double>{0.6, 0.4});
}

TEST_CASE("class geometry") {
  const Matrix circle = class_means(10, 2, 3.0);
  CHECK(circle.rows() == 10);
  CHECK(circle.cols() == 2);
  for (int i = 0; i < 10; ++i) CHECK(circle.row(i).norm() == Approx(3.0));
  const Matrix basis = class_means(4, 6, 2.0);
  CHECK(basis.leftCols(4) == 2.0 * Matrix::Identity(4, 4));
  CHECK(basis.rightCols(2).isZero());

  const Matrix post = class_posterior(circle.topRows(3), circle, 1.0);
  for (int i = 0; i < 3; ++i) {
    CHECK(post.row(i).sum() == Approx(1.0));
    Eigen::Index best;
    post.row(i).maxCoeff(&best);
    CHECK(best == i);
  }
}

TEST_CASE("synthetic experts") {
  SetupSpec spec;
  spec.n_samples = 4000;
  spec.seed = 5;
  const GeneratedData g = generate(spec);
  CHECK(g.panel.coverage ==
        std::vector<std::vector<int>>{{1, 2, 3, 4, 5, 6, 7}, {8, 9}, {10}});
  CHECK(g.panel.beta == Vector::Zero(3));
  CHECK(g.costs.normalizer == 1.0);
  for (int k = 0; k < 3; ++k) {
    double wrong = 0.0, outside = 0.0;
    for (int i = 0; i < g.data.size(); ++i) {
      const int y = g.data.labels[i];
      const bool right = g.panel.predictions(i, k) == y;
      if (covers(g.panel.coverage[k], y)) {
        CHECK(right);
      } else {
        outside += 1.0;
        wrong += right ? 0.0 : 1.0;
      }
    }
    CHECK(within_3_sigma(wrong, outside, 0.9));
  }
  for (int c = 1; c <= 10; ++c) {
    double hits = 0.0;
    for (int y : g.data.labels) hits += y == c ? 1.0 : 0.0;
    CHECK(within_3_sigma(hits, 4000, 0.1));
  }
}

TEST_CASE("inference-cost betas") {
  SetupSpec spec;
  spec.cost_type = CostType::kErrorPlusCost;
  spec.seed = 6;
  const GeneratedData g = generate(spec);
  CHECK(g.panel.beta.isApprox(vec({0.7, 0.2, 0.1})));
  CHECK(g.costs.normalizer == Approx(1.7));
  CHECK(g.costs.values.minCoeff() >= 0.0);
  CHECK(g.costs.values.maxCoeff() <= 1.0);
}

TEST_CASE("generation is deterministic per seed") {
  SetupSpec spec;
  spec.setup = SetupKind::kSetupIII;
  spec.seed = 9;
  const GeneratedData a = generate(spec);
  const GeneratedData b = generate(spec);
  CHECK(a.data.features == b.data.features);
  CHECK(a.data.labels == b.data.labels);
  CHECK(a.panel.predictions == b.panel.predictions);
  CHECK(a.costs.values == b.costs.values);
  spec.seed = 10;
  CHECK(generate(spec).data.features != a.data.features);

  spec.n_samples = 99;
  CHECK_THROWS_AS(generate(spec), InvalidInput);
}

TEST_CASE("severe imbalance") {
  SetupSpec spec;
  spec.setup = SetupKind::kSevere;
  spec.n_samples = 4000;
  spec.seed = 11;
  const GeneratedData g = generate(spec);
  CHECK(g.panel.num_experts() == 2);
  const std::vector<int> best = lowest_cost_experts(g.costs);
  double first = 0.0;
  for (int k : best) first += k == 0 ? 1.0 : 0.0;
  // Expert 2 guesses right on a tenth of expert 1's classes and wins the tie.
  CHECK(within_3_sigma(first, 4000, 0.9 * 0.9));
}

TEST_CASE("real fidelity") {
  SetupSpec spec;
  spec.n_samples = 6000;
  spec.fidelity = RealFidelity{0.99, 0.15};
  spec.seed = 12;
  const GeneratedData g = generate(spec);
  double in_hits = 0.0, in_total = 0.0, out_hits = 0.0, out_total = 0.0;
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < g.data.size(); ++i) {
      const int y = g.data.labels[i];
      const double right = g.panel.predictions(i, k) == y ? 1.0 : 0.0;
      if (covers(g.panel.coverage[k], y)) {
        in_hits += right;
        in_total += 1.0;
      } else {
        out_hits += right;
        out_total += 1.0;
      }
    }
  }
  CHECK(within_3_sigma(in_hits, in_total, 0.99));
  CHECK(within_3_sigma(out_hits, out_total, 0.15));
}

TEST_CASE("routing analog presets") {
  const LlmAnalogSpec a = llm_error_only_spec(2000, 1);
  CHECK(a.target_ratios.isApprox(vec({0.822, 0.128, 0.05})));
  CHECK(a.beta.isZero());
  const LlmAnalogSpec b = llm_error_cost_spec(2000, 1);
  CHECK(b.target_ratios.isApprox(vec({0.312, 0.12, 0.568})));
  CHECK(b.beta.isApprox(vec({1.0, 0.6, 0.1})));

  for (const LlmAnalogSpec& spec : {a, b}) {
    const LlmAnalog out = generate_llm_analog(spec);
    CHECK((out.bayes_ratios - spec.target_ratios).cwiseAbs().maxCoeff() <= 0.01);
    CHECK(out.generated.data.size() == 2000);
    CHECK(out.regions.size() == 2000);
    const std::vector<int> best = lowest_cost_experts(out.generated.costs);
    for (int i = 0; i < 2000; ++i) CHECK(best[i] == out.regions[i]);
  }
  CHECK(generate_llm_analog(b).generated.costs.cost_type == CostType::kErrorPlusCost);
  CHECK(generate_llm_analog(b).generated.costs.values ==
        generate_llm_analog(b).generated.costs.values);
}

TEST_CASE("routing analog edge cases") {
  LlmAnalogSpec spec;
  spec.target_ratios = vec({1, 0, 0});
  spec.accuracy = Matrix::Constant(3, 3, 0.5);
  spec.accuracy.row(0) << 1.0, 0.5, 0.5;
  spec.beta = Vector::Zero(3);
  spec.n_samples = 200;
  CHECK(generate_llm_analog(spec).bayes_ratios.isApprox(vec({1, 0, 0})));

  // Expert 1 can never be strictly cheaper when the others are always right.
  spec.accuracy.row(0) << 0.0, 1.0, 1.0;
  CHECK_THROWS_AS(generate_llm_analog(spec), InvalidInput);

  spec.accuracy(0, 0) = 1.5;
  CHECK_THROWS_AS(generate_llm_analog(spec), InvalidInput);
  spec.accuracy(0, 0) = 1.0;
  spec.beta = Vector::Zero(2);
  CHECK_THROWS_AS(generate_llm_analog(spec), InvalidInput);
}

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
#include <numeric>
#include <random>

#include <json.hpp>

#include "mild/core.hpp"

using namespace mild;
using doctest::Approx;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Independent evaluation of the reformulated right-hand side, written out
// from the reward definitions rather than through rewards_row.
double reformulated(const Vector& scores, const Vector& costs, RewardScheme s) {
  const auto p = scores.size();
  const double total = costs.sum();
  double rhs = s == RewardScheme::kLemma1 ? -(p - 2.0) * total
                                          : total - (p - 1.0);
  for (Eigen::Index k = 0; k < p; ++k) {
    double best_other = -INFINITY;
    for (Eigen::Index j = 0; j < p; ++j)
      if (j != k) best_other = std::max(best_other, scores(j));
    if (scores(k) - best_other > 0.0) continue;
    rhs += s == RewardScheme::kLemma1 ? total - costs(k) : 1.0 - costs(k);
  }
  return rhs;
}

CostTensor cost_tensor(const Matrix& values, CostType type = CostType::kErrorOnly,
                       double normalizer = 1.0) {
  CostTensor c;
  c.values = values;
  c.cost_type = type;
  c.normalizer = normalizer;
  return c;
}

}  // namespace

TEST_CASE("deferral loss picks the argmax with highest-index ties") {
  CHECK(deferral_loss(vec({1, 0}), vec({0.2, 0.8})) == Approx(0.2));
  CHECK(deferral_loss(vec({0, 0, 0}), vec({0.5, 0.3, 0.9})) == Approx(0.9));
  CHECK(deferral_loss(vec({-1, 2, 0}), vec({1, 0, 1})) == 0.0);
  CHECK_THROWS_AS(deferral_loss(vec({1, 0}), vec({0.2, 0.8, 0.1})), InvalidInput);
}

TEST_CASE("deferral loss through a router") {
  FeatureMapSpec spec;
  spec.append_bias = false;
  const Router router(FeatureMap(spec, 2), Matrix{{1, 0}, {0, 1}});
  CHECK(deferral_loss(router, vec({2, 1}), vec({0.2, 0.8})) == Approx(0.2));
  CHECK(deferral_loss(router, vec({1, 1}), vec({0.2, 0.8})) == Approx(0.8));
  CHECK_THROWS_AS(deferral_loss(router, vec({1, 1}), vec({0.2, 0.8, 0})),
                  InvalidInput);
}

TEST_CASE("margin") {
  CHECK(margin(vec({3, 1, 0}), 0) == 2.0);
  CHECK(margin(vec({3, 1, 0}), 2) == -3.0);
  CHECK(margin(vec({2, 2}), 0) == 0.0);
  CHECK_THROWS_AS(margin(vec({2}), 0), InvalidInput);
  CHECK_THROWS_AS(margin(vec({2, 1}), 2), InvalidInput);
}

TEST_CASE("rewards from costs") {
  const Vector c = vec({0.2, 0.8});
  CHECK(rewards_row(c, RewardScheme::kLemma1).isApprox(vec({0.8, 0.2})));
  CHECK(rewards_row(c, RewardScheme::kLemma2).isApprox(vec({0.8, 0.2})));
  CHECK(rewards_row(vec({0, 0, 0}), RewardScheme::kLemma2) == vec({1, 1, 1}));
  // p = 3: the two schemes part ways.
  CHECK(rewards_row(vec({0.1, 0.2, 0.4}), RewardScheme::kLemma1)
            .isApprox(vec({0.6, 0.5, 0.3})));
  CHECK(rewards_row(vec({0.1, 0.2, 0.4}), RewardScheme::kLemma2)
            .isApprox(vec({0.9, 0.8, 0.6})));

  const CostTensor costs = cost_tensor(Matrix{{0.1, 0.5, 0.3}, {1, 0, 0.25}},
                                       CostType::kErrorPlusCost, 2.0);
  const RewardTensor r1 = rewards_from_costs(costs, RewardScheme::kLemma1);
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index k = 0; k < 3; ++k)
      CHECK(r1.values(i, k) == costs.values.row(i).sum() - costs.values(i, k));
  const RewardTensor r2 = rewards_from_costs(costs, RewardScheme::kLemma2);
  CHECK((r2.values.array() <= 1.0).all());
  CHECK((r2.values.array() >= 0.0).all());
}

TEST_CASE("reformulation constants and residual examples") {
  CHECK(reformulation_constant(vec({0.2, 0.8}), RewardScheme::kLemma1) == 0.0);
  CHECK(reformulation_constant(vec({0.2, 0.8}), RewardScheme::kLemma2) ==
        Approx(0.0));
  CHECK(reformulation_constant(vec({0.5, 0.5, 1}), RewardScheme::kLemma1) ==
        Approx(-2.0));
  CHECK(reformulation_constant(vec({0.5, 0.5, 1}), RewardScheme::kLemma2) ==
        Approx(0.0));
  CHECK(reformulation_residual(vec({1, 0}), vec({0.2, 0.8}),
                               RewardScheme::kLemma1) < 1e-15);
  CHECK(reformulation_residual(vec({1, 0}), vec({0.2, 0.8}),
                               RewardScheme::kLemma2) < 1e-15);
  CHECK(reformulation_residual(vec({0.3, -2}), vec({0, 0}),
                               RewardScheme::kLemma1) == 0.0);
}

TEST_CASE("reformulation needs a unique argmax") {
  // Three-way tie: every margin is zero, so every indicator fires.
  const double residual = reformulation_residual(
      vec({0, 0, 0}), vec({0.5, 0.3, 0.9}), RewardScheme::kLemma1);
  CHECK(residual == Approx(0.8));
}

TEST_CASE("reformulation residual matches an independent evaluation") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  for (int trial = 0; trial < 500; ++trial) {
    const int p = 2 + trial % 5;
    Vector scores(p), costs(p);
    for (int k = 0; k < p; ++k) {
      scores(k) = normal(rng);
      costs(k) = trial % 2 == 0 ? unit(rng) : std::round(unit(rng));
    }
    for (RewardScheme s : {RewardScheme::kLemma1, RewardScheme::kLemma2}) {
      CHECK(deferral_loss(scores, costs) ==
            Approx(reformulated(scores, costs, s)).epsilon(1e-12));
      CHECK(reformulation_residual(scores, costs, s) < 1e-12);
    }
  }
}

TEST_CASE("conditional expert distribution") {
  SUBCASE("deterministic label") {
    const auto d = conditional_expert_dist(Matrix{{0.8, 0.2}}, vec({1}));
    CHECK(d.probs.isApprox(vec({0.8, 0.2})));
    CHECK(d.big_c == Approx(1.0));
    CHECK_FALSE(d.zero_mass);
  }
  SUBCASE("equal rewards") {
    const auto d = conditional_expert_dist(Matrix{{0.3, 0.3, 0.3}, {0.3, 0.3, 0.3}},
                                           vec({0.25, 0.75}));
    CHECK(d.probs.isApprox(Vector::Constant(3, 1.0 / 3.0)));
    CHECK(d.big_c == Approx(0.9));
  }
  SUBCASE("two labels averaging") {
    const auto d = conditional_expert_dist(Matrix{{1, 0}, {0, 1}}, vec({0.5, 0.5}));
    CHECK(d.probs.isApprox(vec({0.5, 0.5})));
    CHECK(d.big_c == Approx(1.0));
  }
  SUBCASE("zero mass is flagged") {
    const auto d = conditional_expert_dist(Matrix{{0, 0}}, vec({1}));
    CHECK(d.zero_mass);
    CHECK(d.big_c == 0.0);
    CHECK(d.probs.isApprox(vec({0.5, 0.5})));
  }
  CHECK_THROWS_AS(conditional_expert_dist(Matrix{{-1, 0}}, vec({1})), InvalidInput);
  CHECK_THROWS_AS(conditional_expert_dist(Matrix{{1, 0}}, vec({0.5})), InvalidInput);
}

TEST_CASE("evaluate") {
  FeatureMapSpec spec;
  Dataset data;
  data.num_classes = 2;
  data.features = Matrix::Random(4, 2);
  data.labels = {1, 2, 1, 2};
  // Bias-only preference for expert 1.
  Matrix w = Matrix::Zero(3, 3);
  w(0, 2) = 1.0;
  const Router router(FeatureMap(spec, 2), w);
  Matrix values = Matrix::Zero(4, 3);
  values.col(0).setConstant(0.54);
  values.col(1).setConstant(1.0);
  const EvalReport report =
      evaluate(router, data, cost_tensor(values, CostType::kErrorPlusCost));
  CHECK(report.num_samples == 4);
  CHECK(report.deferral_loss == Approx(0.54));
  CHECK(report.ratios.isApprox(vec({1, 0, 0})));

  const EvalReport single =
      evaluate_selections({1}, cost_tensor(Matrix{{0, 1}}));
  CHECK(single.ratios == vec({0, 1}));
  CHECK(single.deferral_loss == 1.0);

  Dataset empty;
  empty.num_classes = 2;
  empty.features.resize(0, 2);
  CHECK_THROWS_AS(evaluate(router, empty, cost_tensor(Matrix(0, 3))), InvalidInput);
}

TEST_CASE("per-region routing in Setup I with inference costs averages 0.54") {
  // One sample per class; classes 1-7, 8-9 and 10 belong to experts 1, 2, 3.
  Dataset data;
  data.num_classes = 10;
  data.features = Matrix::Zero(10, 1);
  for (int y = 1; y <= 10; ++y) data.labels.push_back(y);
  ExpertPanel panel;
  panel.beta = vec({0.7, 0.2, 0.1});
  panel.predictions = IntMatrix::Constant(10, 3, 1);
  std::vector<int> routed;
  for (int y = 1; y <= 10; ++y) {
    const int k = y <= 7 ? 0 : (y <= 9 ? 1 : 2);
    panel.predictions(y - 1, k) = y;
    routed.push_back(k);
  }
  const CostTensor costs = costs_from_panel(data, panel, CostType::kErrorPlusCost);
  CHECK(costs.normalizer == Approx(1.7));
  const EvalReport report = evaluate_selections(routed, costs);
  CHECK(report.deferral_loss * costs.normalizer == Approx(0.54));
}

TEST_CASE("costs from panel") {
  Dataset data;
  data.num_classes = 3;
  data.features = Matrix::Zero(2, 1);
  data.labels = {1, 3};
  ExpertPanel panel;
  panel.beta = vec({0.5, 0.0});
  panel.predictions = IntMatrix{{1, 2}, {3, 3}};
  const CostTensor only = costs_from_panel(data, panel, CostType::kErrorOnly);
  CHECK(only.normalizer == 1.0);
  CHECK(only.values == Matrix{{0, 1}, {0, 0}});
  const CostTensor plus = costs_from_panel(data, panel, CostType::kErrorPlusCost);
  CHECK(plus.normalizer == 1.5);
  CHECK(plus.values.isApprox(Matrix{{0.5 / 1.5, 1 / 1.5}, {0.5 / 1.5, 0}}));
  CHECK_NOTHROW(plus.validate());
}

TEST_CASE("type invariants") {
  Dataset data;
  data.num_classes = 2;
  data.features = Matrix::Zero(2, 1);
  data.labels = {1, 3};
  CHECK_THROWS_AS(data.validate(), InvalidInput);
  data.labels = {1, 2};
  CHECK_NOTHROW(data.validate());
  data.features(0, 0) = std::nan("");
  CHECK_THROWS_AS(data.validate(), InvalidInput);
  data.features(0, 0) = 0.0;
  data.conditional_label_dist = Matrix{{0.5, 0.5}, {0.5, 0.4}};
  CHECK_THROWS_AS(data.validate(), InvalidInput);

  ExpertPanel panel;
  panel.beta = vec({0.1});
  panel.predictions = IntMatrix::Constant(2, 1, 1);
  CHECK_THROWS_AS(panel.validate(2), InvalidInput);
  panel.beta = vec({0.1, -0.1});
  panel.predictions = IntMatrix::Constant(2, 2, 1);
  CHECK_THROWS_AS(panel.validate(2), InvalidInput);

  CHECK_THROWS_AS(cost_tensor(Matrix{{0.5, 0}}).validate(), InvalidInput);
  CHECK_THROWS_AS(cost_tensor(Matrix{{1.5, 0}}, CostType::kErrorPlusCost).validate(),
                  InvalidInput);
  CHECK_NOTHROW(cost_tensor(Matrix{{0.5, 0}}, CostType::kErrorOnly, 2.0).validate());

  CHECK_THROWS_AS(MarginVector(vec({1, 0})), InvalidInput);
  CHECK(MarginVector::uniform(3, 0.5).rho == Vector::Constant(3, 0.5));
}

TEST_CASE("feature maps") {
  FeatureMapSpec spec;
  const FeatureMap identity(spec, 2);
  CHECK(identity.output_dim() == 3);
  CHECK(identity.apply(vec({4, 5})) == vec({4, 5, 1}));

  spec.kind = FeatureMapKind::kRandomFourier;
  spec.output_dim = 50;
  spec.bandwidth = 2.0;
  spec.seed = 11;
  const FeatureMap a(spec, 3), b(spec, 3);
  const Matrix x = Matrix::Random(5, 3);
  CHECK(a.apply_rows(x) == b.apply_rows(x));
  CHECK(a.output_dim() == 51);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    CHECK(a.apply(x.row(i).transpose()).isApprox(a.apply_rows(x).row(i).transpose()));
  // sqrt(2/D) cos(.) entries: |phi|^2 <= 2 + 1 with the bias.
  CHECK(a.apply_rows(x).rowwise().squaredNorm().maxCoeff() <= 3.0 + 1e-12);
  spec.seed = 12;
  CHECK_FALSE(FeatureMap(spec, 3).apply_rows(x) == a.apply_rows(x));
  CHECK_THROWS_AS(a.apply(vec({1, 2})), InvalidInput);
}

TEST_CASE("lowest cost experts break ties upward") {
  const auto best = lowest_cost_experts(cost_tensor(Matrix{{0, 0}, {1, 0}, {0, 1}}));
  CHECK(best == std::vector<int>{1, 1, 0});
}

TEST_CASE("eval report json") {
  EvalReport r;
  r.num_samples = 3;
  r.deferral_loss = 0.25;
  r.ratios = vec({0.5, 0.5});
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["num_samples"] == 3);
  CHECK(j["deferral_loss"].get<double>() == 0.25);
  CHECK(j["ratio_1"].get<double>() == 0.5);
  CHECK(j["ratio_2"].get<double>() == 0.5);
}

TEST_CASE("property: relabeling experts does not change the selected cost") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  for (int trial = 0; trial < 300; ++trial) {
    const int p = 2 + trial % 5;
    Vector scores(p), costs(p);
    for (int k = 0; k < p; ++k) {
      scores(k) = normal(rng);
      costs(k) = unit(rng);
    }
    std::vector<int> perm(static_cast<std::size_t>(p));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Vector ps(p), pc(p);
    for (int k = 0; k < p; ++k) {
      ps(k) = scores(perm[static_cast<std::size_t>(k)]);
      pc(k) = costs(perm[static_cast<std::size_t>(k)]);
    }
    CHECK(deferral_loss(ps, pc) == deferral_loss(scores, costs));
  }
}

TEST_CASE("property: ratios form a distribution and DL lies in [0, 1]") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit;
  for (int trial = 0; trial < 100; ++trial) {
    const int p = 2 + trial % 4;
    const int m = 1 + trial % 17;
    Matrix values(m, p);
    std::vector<int> selected;
    for (int i = 0; i < m; ++i) {
      for (int k = 0; k < p; ++k) values(i, k) = unit(rng);
      selected.push_back(static_cast<int>(rng() % static_cast<unsigned>(p)));
    }
    const EvalReport r =
        evaluate_selections(selected, cost_tensor(values, CostType::kErrorPlusCost));
    CHECK(r.ratios.sum() == Approx(1.0).epsilon(1e-12));
    CHECK((r.ratios.array() >= 0.0).all());
    CHECK(r.deferral_loss >= 0.0);
    CHECK(r.deferral_loss <= 1.0);
  }
}

TEST_CASE("name round trips") {
  for (CostType t : {CostType::kErrorOnly, CostType::kErrorPlusCost})
    CHECK(parse_cost_type(to_string(t)) == t);
  for (RewardScheme s : {RewardScheme::kLemma1, RewardScheme::kLemma2})
    CHECK(parse_reward_scheme(to_string(s)) == s);
  CHECK_THROWS_AS(parse_cost_type("nope"), InvalidInput);
}

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
#include <random>
#include <vector>

#include "mild/synth.hpp"
#include "mild/train.hpp"

using namespace mild;
using doctest::Approx;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Two well-separated blobs; expert 1 is free on the first, expert 2 on the
// second, and the other expert always costs 1.
struct Toy {
  Dataset data;
  CostTensor costs;
};

Toy separable_toy(int m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.5);
  Toy toy;
  toy.data.features.resize(m, 2);
  toy.data.labels.resize(m);
  toy.data.num_classes = 2;
  toy.costs.values.resize(m, 2);
  for (int i = 0; i < m; ++i) {
    const int blob = i % 2;
    const double center = blob == 0 ? -4.0 : 4.0;
    toy.data.features(i, 0) = center + noise(rng);
    toy.data.features(i, 1) = noise(rng);
    toy.data.labels[i] = blob + 1;
    toy.costs.values(i, blob) = 0.0;
    toy.costs.values(i, 1 - blob) = 1.0;
  }
  return toy;
}

TrainConfig base_config() {
  TrainConfig config;
  config.lambda = 1e-3;
  config.learning_rate = 0.5;
  config.epochs = 50;
  config.seed = 7;
  config.rho_mode = FormulaRho{};
  return config;
}

double second_term_sum(const Vector& m, const Vector& x, const Vector& rho) {
  return (m.array() * x.array().square() / rho.array().square()).sum();
}

}  // namespace

TEST_CASE("optimal rho allocation") {
  const MarginVector r = optimal_rho(vec({8, 1}), vec({1, 1}), 1.0);
  CHECK(r[0] == Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r[1] == Approx(1.0 / 3.0).epsilon(1e-12));

  // Independent check: brute-force minimum of 8/r^2 + 1/(1-r)^2 on a grid.
  double best_r = 0.0, best = INFINITY;
  for (int i = 1; i < 100000; ++i) {
    const double t = i / 100000.0;
    const double v = 8.0 / (t * t) + 1.0 / ((1 - t) * (1 - t));
    if (v < best) {
      best = v;
      best_r = t;
    }
  }
  CHECK(std::abs(best_r - r[0]) < 1e-4);

  const MarginVector u = optimal_rho(vec({5, 5, 5}), vec({2, 2, 2}), 3.0);
  for (int j = 0; j < 3; ++j) CHECK(u[j] == Approx(1.0));
  const MarginVector a = optimal_rho(vec({3, 9, 1}), vec({0.5, 1, 2}), 2.0);
  const MarginVector b = optimal_rho(vec({3, 9, 1}), vec({5, 10, 20}), 2.0);
  for (int j = 0; j < 3; ++j) CHECK(a[j] == Approx(b[j]).epsilon(1e-12));
  CHECK(std::abs(a.rho.sum() - 2.0) < 1e-12);

  const MarginVector floored = optimal_rho(vec({4, 0, 4}), vec({1, 1, 1}), 3.0);
  CHECK(floored[1] == Approx(1e-3));
  CHECK(std::abs(floored.rho.sum() - 3.0) < 1e-12);
  CHECK(floored[0] == Approx(floored[2]));

  CHECK_THROWS_AS(optimal_rho(vec({0, 0}), vec({1, 1}), 1.0), InvalidInput);
  CHECK_THROWS_AS(optimal_rho(vec({1, 1}), vec({1, 1}), 0.0), InvalidInput);
  CHECK_THROWS_AS(optimal_rho(vec({1, 1}), vec({1, 0}), 1.0), InvalidInput);
}

TEST_CASE("property: formula beats uniform and random allocations") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit;
  for (int trial = 0; trial < 200; ++trial) {
    const int p = 2 + trial % 4;
    Vector m(p), x(p);
    for (int j = 0; j < p; ++j) {
      m(j) = 1 + std::floor(100 * unit(rng));
      x(j) = 0.1 + 3 * unit(rng);
    }
    const double rho_bar = 0.5 + 3 * unit(rng);
    const double formula =
        second_term_sum(m, x, optimal_rho(m, x, rho_bar).rho);
    CHECK(formula <= second_term_sum(m, x, Vector::Constant(p, rho_bar / p)) *
                         (1 + 1e-12));
    Vector random(p);
    for (int j = 0; j < p; ++j) random(j) = 0.01 + unit(rng);
    random *= rho_bar / random.sum();
    CHECK(formula <= second_term_sum(m, x, random) * (1 + 1e-12));
  }
}

TEST_CASE("bound terms") {
  BoundInputs in;
  in.counts = vec({50, 50});
  in.norms = vec({1, 1});
  in.hypothesis_norm = 1.0;
  in.m = 100;
  in.p = 2;
  CHECK(bound_second_term(in, MarginVector::uniform(2)) == Approx(1.131371).epsilon(1e-6));
  CHECK(bound_second_term(in, MarginVector::uniform(2)) ==
        Approx(4 * std::sqrt(2.0) * 2 / 100 * 10).epsilon(1e-12));
  BoundInputs doubled = in;
  doubled.hypothesis_norm = 2.0;
  CHECK(bound_second_term(doubled, MarginVector::uniform(2)) ==
        Approx(2 * bound_second_term(in, MarginVector::uniform(2))));
  CHECK(bound_second_term(in, MarginVector(vec({1.1, 1}))) <
        bound_second_term(in, MarginVector::uniform(2)));
  CHECK(bound_confidence_term(in) ==
        Approx(3 * std::sqrt(std::log(40.0) / 200.0)).epsilon(1e-12));

  BoundInputs bad = in;
  bad.counts = vec({50, 40});
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  bad = in;
  bad.hypothesis_norm = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  bad = in;
  bad.delta = 1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("empirical margin loss") {
  Dataset data;
  data.features = Matrix::Zero(1, 2);
  data.labels = {1};
  data.num_classes = 2;
  const Router router(FeatureMap(FeatureMapSpec{}, 2), 2);
  RewardTensor rewards;
  rewards.values = Matrix(1, 2);
  rewards.values << 0.8, 0.2;
  CHECK(empirical_margin_loss(router, data, rewards, MarginVector::uniform(2),
                              SurrogateSpec{}) == Approx(std::log(2.0)));
  RewardTensor zero{Matrix::Zero(1, 2), RewardScheme::kLemma1};
  CHECK(empirical_margin_loss(router, data, zero, MarginVector::uniform(2),
                              SurrogateSpec{}) == 0.0);

  const Toy toy = separable_toy(20, 1);
  Router random_router(FeatureMap(FeatureMapSpec{}, 2), 2);
  random_router.mutable_weights() << 0.3, -0.2, 0.1, -0.5, 0.4, 0.2;
  const RewardTensor r = rewards_from_costs(toy.costs, RewardScheme::kLemma1);
  std::vector<int> twice;
  for (int i = 0; i < 20; ++i) twice.push_back(i);
  for (int i = 0; i < 20; ++i) twice.push_back(i);
  RewardTensor r2{r.values(twice, Eigen::all), r.scheme};
  const MarginVector rhos(vec({0.7, 1.3}));
  CHECK(empirical_margin_loss(random_router, toy.data.subset(twice), r2, rhos,
                              SurrogateSpec{}) ==
        Approx(empirical_margin_loss(random_router, toy.data, r, rhos,
                                     SurrogateSpec{}))
            .epsilon(1e-12));
  CHECK_THROWS_AS(empirical_margin_loss(random_router, toy.data, rewards, rhos,
                                        SurrogateSpec{}),
                  InvalidInput);
}

TEST_CASE("property: regularized objective gradient") {
  const Toy toy = separable_toy(40, 2);
  const FeatureMap map(FeatureMapSpec{FeatureMapKind::kRandomFourier, 2.0, 12, 5, true}, 2);
  const Matrix phi = map.apply_rows(toy.data.features);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  std::vector<int> rows;
  for (int i = 0; i < 40; i += 3) rows.push_back(i);
  for (int trial = 0; trial < 20; ++trial) {
    for (auto scheme : {RewardScheme::kLemma1, RewardScheme::kLemma2}) {
      const Matrix rewards = rewards_from_costs(toy.costs, scheme).values;
      Matrix w(2, phi.cols());
      for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = normal(rng);
      const MarginVector rhos(vec({0.2 + unit(rng), 0.2 + unit(rng)}));
      const SurrogateSpec spec{trial % 2 == 0 ? 1.0 : 0.5, Aggregation::kSum};
      const double lambda = 0.01 * unit(rng);
      const ObjectiveValue at =
          regularized_objective(phi, rewards, rows, w, rhos, spec, lambda);
      Matrix numeric(w.rows(), w.cols());
      const double h = 1e-5;
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        Matrix up = w, down = w;
        up(i) += h;
        down(i) -= h;
        numeric(i) =
            (regularized_objective(phi, rewards, rows, up, rhos, spec, lambda).value -
             regularized_objective(phi, rewards, rows, down, rhos, spec, lambda).value) /
            (2 * h);
      }
      CHECK((at.gradient - numeric).norm() / std::max(numeric.norm(), 1e-8) < 1e-4);
    }
  }
}

TEST_CASE("heavy regularization routes everything to the highest index") {
  const Toy toy = separable_toy(100, 3);
  TrainConfig config = base_config();
  config.lambda = 1e6;
  const TrainResult result =
      train(toy.data, toy.costs, RewardScheme::kLemma1, config, Method::kMild);
  CHECK(result.router.weights().cwiseAbs().maxCoeff() < 1e-6);
  const Matrix scores = result.router.score_rows(toy.data.features);
  CHECK((scores.rowwise().maxCoeff() - scores.rowwise().minCoeff()).maxCoeff() < 1e-4);
  // The minimizer sits O(1 / lambda) away from zero; at zero every score ties.
  const Router limit(result.router.feature_map(), 2);
  for (int i = 0; i < toy.data.size(); ++i)
    CHECK(limit.predict(toy.data.features.row(i).transpose()) == 1);
}

TEST_CASE("MILD with unit margins and Lemma 1 rewards is TDEF") {
  const Toy toy = separable_toy(120, 4);
  for (int batch : {0, 16}) {
    TrainConfig config = base_config();
    config.batch_size = batch;
    config.rho_mode = FixedRho{MarginVector::uniform(2)};
    const TrainResult mild = train(toy.data, toy.costs, RewardScheme::kLemma1,
                                   config, Method::kMild, {true});
    const TrainResult tdef = train(toy.data, toy.costs, RewardScheme::kLemma2,
                                   config, Method::kTdef, {true});
    REQUIRE(mild.weight_history.size() == tdef.weight_history.size());
    for (std::size_t e = 0; e < mild.weight_history.size(); ++e)
      CHECK(mild.weight_history[e] == tdef.weight_history[e]);
    CHECK(std::abs(mild.trace.back().objective - tdef.trace.back().objective) < 1e-9);
  }
}

TEST_CASE("training is bit-reproducible") {
  const Toy toy = separable_toy(90, 5);
  TrainConfig config = base_config();
  config.batch_size = 10;
  const TrainResult a = train(toy.data, toy.costs, RewardScheme::kLemma2, config, Method::kMild);
  const TrainResult b = train(toy.data, toy.costs, RewardScheme::kLemma2, config, Method::kMild);
  CHECK(a.router.weights() == b.router.weights());
  CHECK(trace_to_csv(a.trace) == trace_to_csv(b.trace));
  config.seed = 8;
  const TrainResult c = train(toy.data, toy.costs, RewardScheme::kLemma2, config, Method::kMild);
  CHECK(a.router.weights() != c.router.weights());
}

TEST_CASE("full-batch objective descends") {
  GeneratedData g = generate(SetupSpec{SetupKind::kSetupII, {}, 6, 400, 2, 3.0, 1.0,
                                       SyntheticFidelity{}, CostType::kErrorPlusCost, 9});
  TrainConfig config = base_config();
  config.epochs = 80;
  config.feature_map = FeatureMapSpec{FeatureMapKind::kRandomFourier, 1.0, 30, 3, true};
  const TrainResult result =
      train(g.data, g.costs, RewardScheme::kLemma1, config, Method::kMild);
  REQUIRE(result.trace.size() == 80);
  for (std::size_t e = 1; e < result.trace.size(); ++e)
    CHECK(result.trace[e].objective <= result.trace[e - 1].objective + 1e-6);
  for (const TraceRow& row : result.trace) {
    CHECK(std::abs(row.ratios.sum() - 1.0) < 1e-12);
    CHECK(row.val_dl >= 0.0);
  }
}

TEST_CASE("mini-batch objective descends over windows of five epochs") {
  const Toy toy = separable_toy(200, 6);
  TrainConfig config = base_config();
  config.batch_size = 20;
  config.epochs = 60;
  config.learning_rate = 0.1;
  const TrainResult result =
      train(toy.data, toy.costs, RewardScheme::kLemma1, config, Method::kMild);
  std::vector<double> windows;
  for (std::size_t e = 0; e + 5 <= result.trace.size(); e += 5) {
    double total = 0.0;
    for (std::size_t i = e; i < e + 5; ++i) total += result.trace[i].objective;
    windows.push_back(total / 5);
  }
  for (std::size_t w = 1; w < windows.size(); ++w)
    CHECK(windows[w] <= windows[w - 1] + 1e-6);
}

TEST_CASE("separable toy reaches a small deferral loss") {
  const Toy toy = separable_toy(400, 7);
  TrainConfig config = base_config();
  config.epochs = 200;
  for (Method method : {Method::kMild, Method::kTdef}) {
    const TrainResult result =
        train(toy.data, toy.costs, RewardScheme::kLemma1, config, method);
    CHECK(evaluate(result.router, toy.data, toy.costs).deferral_loss < 0.05);
    CHECK(result.trace.back().val_dl < 0.05);
  }
}

TEST_CASE("gradient at recorded training weights") {
  const Toy toy = separable_toy(60, 8);
  TrainConfig config = base_config();
  config.epochs = 20;
  config.rho_mode = FixedRho{MarginVector(vec({0.6, 1.4}))};
  const TrainResult result = train(toy.data, toy.costs, RewardScheme::kLemma1,
                                   config, Method::kMild, {true});
  REQUIRE(result.weight_history.size() == 20);
  const Matrix phi = result.router.feature_map().apply_rows(toy.data.features);
  const Matrix rewards = rewards_from_costs(toy.costs, RewardScheme::kLemma1).values;
  for (const Matrix& w : result.weight_history) {
    const ObjectiveValue at = regularized_objective(
        phi, rewards, result.train_rows, w, result.rhos, SurrogateSpec{}, config.lambda);
    Matrix numeric(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      Matrix up = w, down = w;
      up(i) += 1e-5;
      down(i) -= 1e-5;
      numeric(i) = (regularized_objective(phi, rewards, result.train_rows, up,
                                          result.rhos, SurrogateSpec{}, config.lambda)
                        .value -
                    regularized_objective(phi, rewards, result.train_rows, down,
                                          result.rhos, SurrogateSpec{}, config.lambda)
                        .value) /
                   2e-5;
    }
    CHECK((at.gradient - numeric).norm() / std::max(numeric.norm(), 1e-8) < 1e-4);
  }
}

TEST_CASE("divergence is reported with its epoch") {
  const Toy toy = separable_toy(40, 9);
  TrainConfig config = base_config();
  config.lambda = 0.0;
  config.learning_rate = 1e300;
  bool thrown = false;
  try {
    train(toy.data, toy.costs, RewardScheme::kLemma1, config, Method::kMild);
  } catch (const TrainingDiverged& e) {
    thrown = true;
    CHECK(e.epoch() >= 1);
  }
  CHECK(thrown);
}

TEST_CASE("config validation") {
  TrainConfig c = base_config();
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = base_config();
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = base_config();
  c.lambda = -1.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = base_config();
  c.rho_mode = ValidatedRho{0.0, 5, 0.0, 0.2, 1};
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c.rho_mode = ValidatedRho{0.0, 5, 1.0, 0.2, 0};
  CHECK_THROWS_AS(c.validate(), InvalidInput);
}

TEST_CASE("validated margin search") {
  const Toy toy = separable_toy(40, 10);
  TrainConfig config = base_config();
  config.epochs = 5;
  config.rho_mode = ValidatedRho{};
  CHECK_THROWS_AS(select_rho(toy.data, toy.costs, RewardScheme::kLemma1, config, 0.2),
                  InvalidInput);
  CHECK_NOTHROW(select_rho(toy.data, toy.costs, RewardScheme::kLemma1, config, 0.25));
  config.rho_mode = FormulaRho{};
  CHECK_THROWS_AS(select_rho(toy.data, toy.costs, RewardScheme::kLemma1, config, 0.5),
                  InvalidInput);

  // Every candidate has validation DL 0, so the formula allocation wins.
  Toy free = separable_toy(100, 11);
  free.costs.values.setZero();
  for (int folds : {1, 4}) {
    config.rho_mode = ValidatedRho{0.0, 5, 1.0, 0.2, folds};
    const MarginVector picked =
        select_rho(free.data, free.costs, RewardScheme::kLemma1, config, 0.2);
    const Matrix phi = FeatureMap(config.feature_map, 2).apply_rows(free.data.features);
    const GroupStats stats = group_statistics(phi, free.costs);
    const MarginVector formula = optimal_rho(stats.counts, stats.norms, 2.0);
    CHECK(picked.rho.isApprox(formula.rho, 1e-12));
  }
}

TEST_CASE("severe imbalance selects unequal margins") {
  SetupSpec spec;
  spec.setup = SetupKind::kSevere;
  spec.n_samples = 600;
  spec.seed = 12;
  const GeneratedData g = generate(spec);
  TrainConfig config = base_config();
  config.epochs = 30;
  config.rho_mode = ValidatedRho{};
  const MarginVector picked =
      select_rho(g.data, g.costs, RewardScheme::kLemma1, config, 0.2);
  CHECK(std::abs(picked[0] - picked[1]) > 1e-3);
  CHECK(std::abs(picked.rho.sum() - 2.0) < 1e-12);
}

TEST_CASE("group statistics") {
  Matrix phi(4, 2);
  phi << 3, 4, 1, 0, 0, 2, 0, 0.5;
  CostTensor costs;
  costs.values = Matrix(4, 3);
  costs.values << 0, 1, 1, 1, 0, 0, 0, 1, 0, 0.5, 0.5, 0.5;
  const GroupStats stats = group_statistics(phi, costs);
  CHECK(stats.groups == std::vector<int>{0, 2, 2, 2});
  CHECK(stats.counts == vec({1, 0, 3}));
  CHECK(stats.norms(0) == Approx(5.0));
  CHECK(stats.norms(1) == Approx(5.0));
  CHECK(stats.norms(2) == Approx(2.0));
  CHECK(rho_centers(vec({8, 1}), vec({1, 2})).isApprox(vec({2, std::cbrt(4.0)})));
}

TEST_CASE("trace csv") {
  std::vector<TraceRow> trace{{1, 0.5, 0.25, vec({0.75, 0.25})}};
  CHECK(trace_to_csv(trace) ==
        "epoch,objective,val_dl,ratio_1,ratio_2\n1,0.5,0.25,0.75,0.25\n");
  CHECK(parse_method("MILD") == Method::kMild);
  CHECK(to_string(Method::kTdef) == "TDEF");
  CHECK_THROWS_AS(parse_method("mild2"), InvalidInput);
}

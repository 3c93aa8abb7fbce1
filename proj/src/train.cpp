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

#include "mild/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "mild/io.hpp"

namespace mild {
namespace {

// Stream offsets keep the split, the epoch order and the validation split
// independent of each other for a given seed.
constexpr std::uint64_t kSplitStream = 0x5851f42d4c957f2dULL;
constexpr std::uint64_t kOrderStream = 0x14057b7ef767814fULL;
constexpr std::uint64_t kValidationStream = 0x9e3779b97f4a7c15ULL;

std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

double resolve_rho_bar(double rho_bar, int p) {
  return rho_bar > 0.0 ? rho_bar : static_cast<double>(p);
}

// regularized_objective on pre-gathered rows.
ObjectiveValue objective_on_rows(const Matrix& phi, const Matrix& w,
                                 const Matrix& weights, const MarginVector& rhos,
                                 const SurrogateSpec& spec, double lambda) {
  const auto p = weights.rows();
  const auto n = phi.rows();
  if (rhos.size() != p || w.cols() != p)
    throw InvalidInput("objective: one margin and one reward column per expert");
  if (weights.cols() != phi.cols())
    throw InvalidInput("objective: weights and features differ in width");
  const Matrix scores = phi * weights.transpose();
  Matrix score_grad(n, p);
  double total = 0.0;
  if (spec.tau == 1.0 && spec.aggregation == Aggregation::kSum) {
    // Column-at-a-time form of mild_surrogate / grad_mild.
    score_grad.setZero();
    for (Eigen::Index k = 0; k < p; ++k) {
      const double inv_rho = 1.0 / rhos[static_cast<int>(k)];
      Matrix z = (scores.colwise() - scores.col(k)) * inv_rho;
      const Vector top = z.rowwise().maxCoeff();
      z = (z.colwise() - top).array().exp().matrix();
      const Vector mass = z.rowwise().sum();
      const Vector lse = top.array() + mass.array().log();
      total += w.col(k).dot(lse);
      const Vector scale = w.col(k).array() * inv_rho / mass.array();
      score_grad += scale.asDiagonal() * z;
      score_grad.col(k) -= w.col(k) * inv_rho;
    }
  } else {
    for (Eigen::Index r = 0; r < n; ++r) {
      const Vector s = scores.row(r).transpose();
      const Vector wr = w.row(r).transpose();
      total += comp_sum_surrogate(s, wr, rhos, spec);
      score_grad.row(r) = grad_comp_sum_surrogate(s, wr, rhos, spec).transpose();
    }
  }
  ObjectiveValue out;
  const double inv_n = 1.0 / static_cast<double>(n);
  out.value = total * inv_n + lambda * weights.squaredNorm();
  out.gradient = inv_n * score_grad.transpose() * phi + 2.0 * lambda * weights;
  return out;
}

struct FitResult {
  Matrix weights;
  std::vector<TraceRow> trace;
  std::vector<Matrix> history;
};

// Mini-batch gradient steps on the smooth part followed by the exact
// proximal step of lambda ||W||^2, which stays stable for any lambda.
FitResult fit(const Matrix& phi, const Matrix& rewards,
              const std::vector<int>& train_rows,
              const std::vector<int>& holdout_rows, const CostTensor& costs,
              const MarginVector& rhos, const TrainConfig& config,
              bool record_weights) {
  const auto p = rewards.cols();
  FitResult out;
  out.weights = Matrix::Zero(p, phi.cols());
  const int n = static_cast<int>(train_rows.size());
  const int batch =
      config.batch_size <= 0 || config.batch_size >= n ? n : config.batch_size;
  const double shrink = 1.0 / (1.0 + 2.0 * config.learning_rate * config.lambda);
  std::mt19937_64 order_rng(config.seed ^ kOrderStream);
  std::vector<int> order = train_rows;
  std::vector<int> rows;
  const CostTensor holdout_costs = costs.subset(holdout_rows);
  const Matrix holdout_phi = phi(holdout_rows, Eigen::all);

  const Matrix train_phi = phi(train_rows, Eigen::all);
  const Matrix train_rewards = rewards(train_rows, Eigen::all);

  // Full batch: the objective evaluated for the trace also supplies the next
  // step's gradient.
  ObjectiveValue current;
  if (batch >= n)
    current = objective_on_rows(train_phi, train_rewards, out.weights, rhos,
                                config.surrogate, config.lambda);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    TraceRow row;
    row.epoch = epoch;
    if (batch < n) {
      std::shuffle(order.begin(), order.end(), order_rng);
      for (int start = 0; start < n; start += batch) {
        rows.assign(order.begin() + start,
                    order.begin() + std::min(n, start + batch));
        const ObjectiveValue step = regularized_objective(
            phi, rewards, rows, out.weights, rhos, config.surrogate, 0.0);
        out.weights =
            shrink * (out.weights - config.learning_rate * step.gradient);
      }
      row.objective = objective_on_rows(train_phi, train_rewards, out.weights,
                                        rhos, config.surrogate, config.lambda)
                          .value;
    } else {
      const Matrix data_gradient =
          current.gradient - 2.0 * config.lambda * out.weights;
      out.weights = shrink * (out.weights - config.learning_rate * data_gradient);
      current = objective_on_rows(train_phi, train_rewards, out.weights, rhos,
                                  config.surrogate, config.lambda);
      row.objective = current.value;
    }
    if (!std::isfinite(row.objective) || !out.weights.allFinite())
      throw TrainingDiverged(epoch);
    if (!holdout_rows.empty()) {
      const Matrix scores = holdout_phi * out.weights.transpose();
      std::vector<int> selected;
      selected.reserve(holdout_rows.size());
      for (Eigen::Index i = 0; i < scores.rows(); ++i)
        selected.push_back(select_expert(scores.row(i).transpose()));
      const EvalReport report = evaluate_selections(selected, holdout_costs);
      row.val_dl = report.deferral_loss;
      row.ratios = report.ratios;
    } else {
      row.val_dl = std::numeric_limits<double>::quiet_NaN();
      row.ratios = Vector::Constant(p, std::numeric_limits<double>::quiet_NaN());
    }
    out.trace.push_back(std::move(row));
    if (record_weights) out.history.push_back(out.weights);
  }
  return out;
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::kMild: return "MILD";
    case Method::kTdef: return "TDEF";
    case Method::kOracle: return "Oracle";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  if (text == "MILD" || text == "mild") return Method::kMild;
  if (text == "TDEF" || text == "tdef") return Method::kTdef;
  if (text == "Oracle" || text == "oracle") return Method::kOracle;
  throw InvalidInput("unknown method: " + text);
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw InvalidInput("train config: lambda must be >= 0");
  if (!(learning_rate > 0.0))
    throw InvalidInput("train config: learning_rate must be > 0");
  if (epochs < 1) throw InvalidInput("train config: epochs must be >= 1");
  if (batch_size < 0) throw InvalidInput("train config: batch_size must be >= 0");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
    throw InvalidInput("train config: holdout_fraction must be in [0, 1)");
  surrogate.validate();
  if (const auto* v = std::get_if<ValidatedRho>(&rho_mode)) {
    if (v->halfwidth < 0 || !(v->step > 0.0))
      throw InvalidInput("train config: bad validation neighborhood");
    if (!(v->validation_split > 0.0 && v->validation_split < 1.0))
      throw InvalidInput("train config: validation_split must be in (0, 1)");
    if (v->folds < 1) throw InvalidInput("train config: folds must be >= 1");
  }
}

TrainingDiverged::TrainingDiverged(int epoch)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch)),
      epoch_(epoch) {}

GroupStats group_statistics(const Matrix& mapped_features,
                            const CostTensor& costs) {
  if (mapped_features.rows() != costs.size())
    throw InvalidInput("group_statistics: features and costs differ in length");
  const int p = costs.num_experts();
  GroupStats stats;
  stats.groups = lowest_cost_experts(costs);
  stats.counts = Vector::Zero(p);
  stats.norms = Vector::Zero(p);
  const Vector row_norms = mapped_features.rowwise().norm();
  const double overall = row_norms.size() > 0 ? row_norms.maxCoeff() : 1.0;
  for (std::size_t i = 0; i < stats.groups.size(); ++i) {
    const int j = stats.groups[i];
    stats.counts(j) += 1.0;
    stats.norms(j) = std::max(stats.norms(j), row_norms(static_cast<Eigen::Index>(i)));
  }
  for (int j = 0; j < p; ++j)
    if (stats.counts(j) == 0.0) stats.norms(j) = overall > 0.0 ? overall : 1.0;
  return stats;
}

Vector rho_centers(const Vector& counts, const Vector& norms) {
  if (counts.size() != norms.size())
    throw InvalidInput("rho_centers: counts and norms differ in length");
  if ((counts.array() < 0.0).any())
    throw InvalidInput("rho_centers: negative count");
  if ((norms.array() <= 0.0).any())
    throw InvalidInput("rho_centers: norms must be positive");
  return (counts.array() * norms.array().square()).unaryExpr([](double v) { return std::cbrt(v); }).matrix();
}

MarginVector allocate_rho(const Vector& centers, double rho_bar) {
  if (!(rho_bar > 0.0)) throw InvalidInput("allocate_rho: rho_bar must be > 0");
  if ((centers.array() < 0.0).any())
    throw InvalidInput("allocate_rho: negative center");
  const double total = centers.sum();
  if (!(total > 0.0)) throw InvalidInput("allocate_rho: every group is empty");
  const auto p = centers.size();
  const double floor_value = 1e-3 * rho_bar / static_cast<double>(p);
  const auto empty = (centers.array() == 0.0).count();
  const double shared = rho_bar - floor_value * static_cast<double>(empty);
  Vector rho(p);
  for (Eigen::Index j = 0; j < p; ++j)
    rho(j) = centers(j) == 0.0 ? floor_value : shared * centers(j) / total;
  return MarginVector(rho);
}

MarginVector optimal_rho(const Vector& counts, const Vector& norms,
                         double rho_bar) {
  if ((counts.array() <= 0.0).all())
    throw InvalidInput("optimal_rho: all group counts are zero");
  return allocate_rho(rho_centers(counts, norms), rho_bar);
}

void BoundInputs::validate() const {
  if (counts.size() != p || norms.size() != p || p < 1)
    throw InvalidInput("bound inputs: need one count and one norm per group");
  if (std::abs(counts.sum() - m) > 1e-9)
    throw InvalidInput("bound inputs: counts must sum to m");
  if ((norms.array() <= 0.0).any())
    throw InvalidInput("bound inputs: norms must be positive");
  if (!(hypothesis_norm > 0.0))
    throw InvalidInput("bound inputs: F must be positive");
  if (!(delta > 0.0 && delta < 1.0))
    throw InvalidInput("bound inputs: delta must be in (0, 1)");
}

double bound_second_term(const BoundInputs& inputs, const MarginVector& rhos) {
  inputs.validate();
  if (rhos.size() != inputs.p)
    throw InvalidInput("bound_second_term: one margin per group");
  const double weighted =
      (inputs.counts.array() * inputs.norms.array().square() /
       rhos.rho.array().square())
          .sum();
  return 4.0 * std::numbers::sqrt2 * inputs.p * inputs.hypothesis_norm /
         inputs.m * std::sqrt(weighted);
}

double bound_confidence_term(const BoundInputs& inputs) {
  inputs.validate();
  return 3.0 * std::sqrt(std::log(2.0 / inputs.delta) / (2.0 * inputs.m));
}

double empirical_margin_loss(const Router& router, const Dataset& data,
                             const RewardTensor& rewards,
                             const MarginVector& rhos,
                             const SurrogateSpec& spec) {
  if (data.size() == 0) throw InvalidInput("empirical loss: empty dataset");
  if (rewards.values.rows() != data.size() ||
      rewards.values.cols() != router.num_experts() ||
      rhos.size() != router.num_experts())
    throw InvalidInput("empirical loss: dimension mismatch");
  const Matrix scores = router.score_rows(data.features);
  double total = 0.0;
  for (int i = 0; i < data.size(); ++i)
    total += comp_sum_surrogate(scores.row(i).transpose(),
                                rewards.values.row(i).transpose(), rhos, spec);
  return total / data.size();
}

ObjectiveValue regularized_objective(const Matrix& mapped_features,
                                     const Matrix& rewards,
                                     const std::vector<int>& rows,
                                     const Matrix& weights,
                                     const MarginVector& rhos,
                                     const SurrogateSpec& spec, double lambda) {
  if (rows.empty()) throw InvalidInput("objective: no rows");
  return objective_on_rows(mapped_features(rows, Eigen::all),
                           rewards(rows, Eigen::all), weights, rhos, spec,
                           lambda);
}

TrainResult train(const Dataset& data, const CostTensor& costs,
                  RewardScheme scheme, const TrainConfig& config, Method method,
                  const TrainOptions& options) {
  data.validate();
  config.validate();
  if (data.size() == 0) throw InvalidInput("train: empty dataset");
  if (costs.size() != data.size())
    throw InvalidInput("train: costs and dataset differ in length");
  if (method == Method::kOracle)
    throw InvalidInput("train: the oracle is not a trainable method");
  const int p = costs.num_experts();
  const int m = data.size();

  TrainResult result;
  const std::vector<int> perm = shuffled_indices(m, config.seed ^ kSplitStream);
  int holdout = static_cast<int>(std::floor(config.holdout_fraction * m));
  if (config.holdout_fraction > 0.0) holdout = std::max(holdout, 1);
  if (holdout >= m) throw InvalidInput("train: holdout leaves no training rows");
  result.train_rows.assign(perm.begin(), perm.end() - holdout);
  result.holdout_rows.assign(perm.end() - holdout, perm.end());

  const FeatureMap map(config.feature_map, data.dim());
  const Matrix phi = map.apply_rows(data.features);
  const RewardScheme effective =
      method == Method::kTdef ? RewardScheme::kLemma1 : scheme;
  const Matrix rewards = rewards_from_costs(costs, effective).values;

  if (method == Method::kTdef) {
    result.rhos = MarginVector::uniform(p);
  } else if (const auto* fixed = std::get_if<FixedRho>(&config.rho_mode)) {
    if (fixed->rhos.size() != p)
      throw InvalidInput("train: fixed margin vector has the wrong length");
    result.rhos = fixed->rhos;
  } else if (const auto* formula = std::get_if<FormulaRho>(&config.rho_mode)) {
    const GroupStats stats = group_statistics(
        phi(result.train_rows, Eigen::all),
        costs.subset(result.train_rows));
    result.rhos = optimal_rho(stats.counts, stats.norms,
                              resolve_rho_bar(formula->rho_bar, p));
  } else {
    const auto& validated = std::get<ValidatedRho>(config.rho_mode);
    result.rhos = select_rho(data.subset(result.train_rows),
                             costs.subset(result.train_rows), scheme, config,
                             validated.validation_split);
  }

  FitResult fitted = fit(phi, rewards, result.train_rows, result.holdout_rows,
                         costs, result.rhos, config, options.record_weights);
  result.router = Router(map, std::move(fitted.weights));
  result.trace = std::move(fitted.trace);
  result.weight_history = std::move(fitted.history);
  return result;
}

MarginVector select_rho(const Dataset& data, const CostTensor& costs,
                        RewardScheme scheme, const TrainConfig& config,
                        double validation_split) {
  config.validate();
  const auto* mode = std::get_if<ValidatedRho>(&config.rho_mode);
  if (mode == nullptr)
    throw InvalidInput("select_rho: rho_mode must be the validated search");
  const int m = data.size();
  const int p = costs.num_experts();
  const int folds = mode->folds;
  const int n_val = folds > 1 ? m / folds
                              : static_cast<int>(std::floor(validation_split * m));
  if (n_val < 10)
    throw InvalidInput("select_rho: validation split has " +
                       std::to_string(n_val) + " samples, need >= 10");
  if (m - n_val < 1) throw InvalidInput("select_rho: no training rows left");

  const std::vector<int> perm =
      shuffled_indices(m, config.seed ^ kValidationStream);
  struct Split {
    std::vector<int> fit_rows;
    std::vector<int> val_rows;
  };
  std::vector<Split> splits;
  if (folds == 1) {
    splits.push_back({std::vector<int>(perm.begin(), perm.end() - n_val),
                      std::vector<int>(perm.end() - n_val, perm.end())});
  } else {
    for (int f = 0; f < folds; ++f) {
      const auto lo = static_cast<std::ptrdiff_t>(f) * m / folds;
      const auto hi = static_cast<std::ptrdiff_t>(f + 1) * m / folds;
      Split split;
      split.val_rows.assign(perm.begin() + lo, perm.begin() + hi);
      split.fit_rows.assign(perm.begin(), perm.begin() + lo);
      split.fit_rows.insert(split.fit_rows.end(), perm.begin() + hi, perm.end());
      splits.push_back(std::move(split));
    }
  }

  const FeatureMap map(config.feature_map, data.dim());
  const Matrix phi = map.apply_rows(data.features);
  const Matrix rewards = rewards_from_costs(costs, scheme).values;
  // The neighborhood is centered on the statistics of all rows so every fold
  // scores the same candidates.
  const GroupStats stats = group_statistics(phi, costs);
  const Vector center = rho_centers(stats.counts, stats.norms);
  const double rho_bar = resolve_rho_bar(mode->rho_bar, p);

  std::vector<MarginVector> candidates{allocate_rho(center, rho_bar)};
  for (int j = 0; j < p; ++j) {
    for (int t = -mode->halfwidth; t <= mode->halfwidth; ++t) {
      if (t == 0) continue;
      Vector moved = center;
      moved(j) += t * mode->step;
      if (moved(j) <= 0.0) continue;
      candidates.push_back(allocate_rho(moved, rho_bar));
    }
  }
  candidates.push_back(MarginVector::uniform(p, rho_bar / p));

  double best_dl = std::numeric_limits<double>::infinity();
  MarginVector best = candidates.front();
  for (const MarginVector& rhos : candidates) {
    std::vector<int> selected;
    std::vector<int> scored_rows;
    for (const Split& split : splits) {
      const FitResult fitted =
          fit(phi, rewards, split.fit_rows, {}, costs, rhos, config, false);
      const Matrix scores =
          phi(split.val_rows, Eigen::all) * fitted.weights.transpose();
      for (Eigen::Index i = 0; i < scores.rows(); ++i)
        selected.push_back(select_expert(scores.row(i).transpose()));
      scored_rows.insert(scored_rows.end(), split.val_rows.begin(),
                         split.val_rows.end());
    }
    const double dl =
        evaluate_selections(selected, costs.subset(scored_rows)).deferral_loss;
    if (dl < best_dl) {
      best_dl = dl;
      best = rhos;
    }
  }
  return best;
}

std::string trace_to_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  out << "epoch,objective,val_dl";
  const auto p = trace.empty() ? 0 : trace.front().ratios.size();
  for (Eigen::Index k = 0; k < p; ++k) out << ",ratio_" << (k + 1);
  out << '\n';
  for (const TraceRow& row : trace) {
    out << row.epoch << ',' << format_real(row.objective) << ','
        << format_real(row.val_dl);
    for (Eigen::Index k = 0; k < row.ratios.size(); ++k)
      out << ',' << format_real(row.ratios(k));
    out << '\n';
  }
  return out.str();
}

}  // namespace mild

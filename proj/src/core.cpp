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

#include "mild/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <json.hpp>

namespace mild {

std::string to_string(CostType type) {
  return type == CostType::kErrorOnly ? "error" : "error_cost";
}

std::string to_string(RewardScheme scheme) {
  return scheme == RewardScheme::kLemma1 ? "lemma1" : "lemma2";
}

CostType parse_cost_type(const std::string& text) {
  if (text == "error" || text == "error_only") return CostType::kErrorOnly;
  if (text == "error_cost" || text == "error_plus_cost")
    return CostType::kErrorPlusCost;
  throw InvalidInput("unknown cost type: " + text);
}

RewardScheme parse_reward_scheme(const std::string& text) {
  if (text == "lemma1") return RewardScheme::kLemma1;
  if (text == "lemma2") return RewardScheme::kLemma2;
  throw InvalidInput("unknown reward scheme: " + text);
}

void Dataset::validate() const {
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw InvalidInput("dataset: feature rows and labels differ in length");
  if (num_classes < 1) throw InvalidInput("dataset: num_classes must be >= 1");
  for (int y : labels)
    if (y < 1 || y > num_classes)
      throw InvalidInput("dataset: label out of range");
  if (!features.allFinite())
    throw InvalidInput("dataset: non-finite feature value");
  if (conditional_label_dist) {
    const Matrix& dist = *conditional_label_dist;
    if (dist.rows() != features.rows() || dist.cols() != num_classes)
      throw InvalidInput("dataset: conditional_label_dist has wrong shape");
    for (Eigen::Index i = 0; i < dist.rows(); ++i) {
      if ((dist.row(i).array() < 0.0).any())
        throw InvalidInput("dataset: negative label probability");
      if (std::abs(dist.row(i).sum() - 1.0) > 1e-9)
        throw InvalidInput("dataset: label distribution does not sum to 1");
    }
  }
}

Dataset Dataset::subset(const std::vector<int>& rows) const {
  Dataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  if (conditional_label_dist)
    out.conditional_label_dist =
        Matrix(static_cast<Eigen::Index>(rows.size()), num_classes);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    out.features.row(i) = features.row(rows[r]);
    out.labels.push_back(labels[rows[r]]);
    if (conditional_label_dist)
      out.conditional_label_dist->row(i) = conditional_label_dist->row(rows[r]);
  }
  return out;
}

void ExpertPanel::validate(int num_classes) const {
  if (num_experts() < 2) throw InvalidInput("expert panel: need p >= 2");
  if (predictions.cols() != beta.size())
    throw InvalidInput("expert panel: predictions and beta disagree on p");
  if ((beta.array() < 0.0).any())
    throw InvalidInput("expert panel: negative beta");
  if (predictions.size() > 0 &&
      (predictions.minCoeff() < 1 || predictions.maxCoeff() > num_classes))
    throw InvalidInput("expert panel: prediction out of label range");
}

ExpertPanel ExpertPanel::subset(const std::vector<int>& rows) const {
  ExpertPanel out;
  out.beta = beta;
  out.coverage = coverage;
  out.predictions.resize(static_cast<Eigen::Index>(rows.size()),
                         predictions.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    out.predictions.row(static_cast<Eigen::Index>(r)) =
        predictions.row(rows[r]);
  return out;
}

void CostTensor::validate() const {
  if (!(normalizer > 0.0)) throw InvalidInput("costs: normalizer must be > 0");
  if (!values.allFinite()) throw InvalidInput("costs: non-finite entry");
  if (values.size() > 0 &&
      (values.minCoeff() < 0.0 || values.maxCoeff() > 1.0))
    throw InvalidInput("costs: entry outside [0, 1]");
  if (cost_type == CostType::kErrorOnly) {
    const double one = 1.0 / normalizer;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      const double v = values.data()[i];
      if (v != 0.0 && std::abs(v - one) > 1e-12)
        throw InvalidInput("costs: error-only entry is not binary");
    }
  }
}

CostTensor CostTensor::subset(const std::vector<int>& rows) const {
  CostTensor out;
  out.cost_type = cost_type;
  out.normalizer = normalizer;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    out.values.row(static_cast<Eigen::Index>(r)) = values.row(rows[r]);
  return out;
}

CostTensor costs_from_panel(const Dataset& data, const ExpertPanel& panel,
                            CostType type) {
  if (panel.predictions.rows() != data.size())
    throw InvalidInput("costs: panel and dataset differ in sample count");
  const int m = data.size();
  const int p = panel.num_experts();
  CostTensor costs;
  costs.cost_type = type;
  costs.normalizer =
      type == CostType::kErrorPlusCost ? 1.0 + panel.beta.maxCoeff() : 1.0;
  costs.values.resize(m, p);
  for (int i = 0; i < m; ++i) {
    for (int k = 0; k < p; ++k) {
      double raw = panel.predictions(i, k) != data.labels[i] ? 1.0 : 0.0;
      if (type == CostType::kErrorPlusCost) raw += panel.beta(k);
      costs.values(i, k) = raw / costs.normalizer;
    }
  }
  return costs;
}

Vector rewards_row(const Vector& costs_row, RewardScheme scheme) {
  if (scheme == RewardScheme::kLemma1)
    return Vector::Constant(costs_row.size(), costs_row.sum()) - costs_row;
  return Vector::Ones(costs_row.size()) - costs_row;
}

RewardTensor rewards_from_costs(const CostTensor& costs, RewardScheme scheme) {
  RewardTensor out;
  out.scheme = scheme;
  out.values.resize(costs.values.rows(), costs.values.cols());
  for (Eigen::Index i = 0; i < costs.values.rows(); ++i)
    out.values.row(i) =
        rewards_row(costs.values.row(i).transpose(), scheme).transpose();
  return out;
}

double reformulation_constant(const Vector& costs_row, RewardScheme scheme) {
  const double p = static_cast<double>(costs_row.size());
  const double total = costs_row.sum();
  if (scheme == RewardScheme::kLemma1) return -(p - 2.0) * total;
  return total - (p - 1.0);
}

MarginVector::MarginVector(Vector values) : rho(std::move(values)) {
  for (Eigen::Index k = 0; k < rho.size(); ++k)
    if (!(rho(k) > 0.0) || !std::isfinite(rho(k)))
      throw InvalidInput("margin vector: every rho must be positive");
}

MarginVector MarginVector::uniform(int p, double value) {
  return MarginVector(Vector::Constant(p, value));
}

FeatureMap::FeatureMap(FeatureMapSpec spec, int input_dim)
    : spec_(spec), input_dim_(input_dim) {
  if (input_dim < 1) throw InvalidInput("feature map: input_dim must be >= 1");
  const int bias = spec_.append_bias ? 1 : 0;
  if (spec_.kind == FeatureMapKind::kIdentity) {
    output_dim_ = input_dim + bias;
    return;
  }
  if (spec_.output_dim < 1 || !(spec_.bandwidth > 0.0))
    throw InvalidInput("feature map: random Fourier needs dim and bandwidth");
  output_dim_ = spec_.output_dim + bias;
  std::mt19937_64 rng(spec_.seed);
  std::normal_distribution<double> normal(0.0, 1.0 / spec_.bandwidth);
  std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
  projection_.resize(spec_.output_dim, input_dim);
  phase_.resize(spec_.output_dim);
  for (int r = 0; r < spec_.output_dim; ++r) {
    for (int c = 0; c < input_dim; ++c) projection_(r, c) = normal(rng);
    phase_(r) = uniform(rng);
  }
}

Vector FeatureMap::apply(const Eigen::Ref<const Vector>& x) const {
  if (x.size() != input_dim_)
    throw InvalidInput("feature map: input dimension mismatch");
  Vector out(output_dim_);
  if (spec_.kind == FeatureMapKind::kIdentity) {
    out.head(input_dim_) = x;
  } else {
    const double scale = std::sqrt(2.0 / spec_.output_dim);
    out.head(spec_.output_dim) =
        scale * ((projection_ * x + phase_).array().cos()).matrix();
  }
  if (spec_.append_bias) out(output_dim_ - 1) = 1.0;
  return out;
}

Matrix FeatureMap::apply_rows(const Matrix& x) const {
  if (x.cols() != input_dim_)
    throw InvalidInput("feature map: input dimension mismatch");
  Matrix out(x.rows(), output_dim_);
  if (spec_.kind == FeatureMapKind::kIdentity) {
    out.leftCols(input_dim_) = x;
  } else {
    const double scale = std::sqrt(2.0 / spec_.output_dim);
    Matrix z = x * projection_.transpose();
    z.rowwise() += phase_.transpose();
    out.leftCols(spec_.output_dim) = scale * z.array().cos().matrix();
  }
  if (spec_.append_bias) out.col(output_dim_ - 1).setOnes();
  return out;
}

int select_expert(const Eigen::Ref<const Vector>& scores) {
  if (scores.size() == 0) throw InvalidInput("select_expert: empty scores");
  int best = 0;
  for (int k = 1; k < scores.size(); ++k)
    if (scores(k) >= scores(best)) best = k;
  return best;
}

double margin(const Eigen::Ref<const Vector>& scores, int k) {
  const auto p = static_cast<int>(scores.size());
  if (p < 2) throw InvalidInput("margin: need at least two experts");
  if (k < 0 || k >= p) throw InvalidInput("margin: expert index out of range");
  double runner_up = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < p; ++j)
    if (j != k) runner_up = std::max(runner_up, scores(j));
  return scores(k) - runner_up;
}

Router::Router(FeatureMap map, Matrix weights)
    : map_(std::move(map)), weights_(std::move(weights)) {
  if (weights_.cols() != map_.output_dim())
    throw InvalidInput("router: weight columns must match feature map");
  if (weights_.rows() < 2) throw InvalidInput("router: need p >= 2 heads");
}

Router::Router(FeatureMap map, int num_experts)
    : Router(map, Matrix::Zero(num_experts, map.output_dim())) {}

Vector Router::scores(const Eigen::Ref<const Vector>& x) const {
  return weights_ * map_.apply(x);
}

Vector Router::scores_from_features(const Eigen::Ref<const Vector>& phi) const {
  return weights_ * phi;
}

Matrix Router::score_rows(const Matrix& x) const {
  return map_.apply_rows(x) * weights_.transpose();
}

int Router::predict(const Eigen::Ref<const Vector>& x) const {
  return select_expert(scores(x));
}

double deferral_loss(const Eigen::Ref<const Vector>& scores,
                     const Eigen::Ref<const Vector>& costs_row) {
  if (scores.size() != costs_row.size())
    throw InvalidInput("deferral_loss: scores and costs differ in length");
  return costs_row(select_expert(scores));
}

double deferral_loss(const Router& router, const Eigen::Ref<const Vector>& x,
                     const Eigen::Ref<const Vector>& costs_row) {
  if (router.num_experts() != costs_row.size())
    throw InvalidInput("deferral_loss: router heads and costs differ");
  return deferral_loss(router.scores(x), costs_row);
}

double reformulation_residual(const Eigen::Ref<const Vector>& scores,
                              const Eigen::Ref<const Vector>& costs_row,
                              RewardScheme scheme) {
  const Vector costs = costs_row;
  const Vector rewards = rewards_row(costs, scheme);
  double reformulated = reformulation_constant(costs, scheme);
  for (int k = 0; k < scores.size(); ++k)
    if (margin(scores, k) <= 0.0) reformulated += rewards(k);
  return std::abs(deferral_loss(scores, costs_row) - reformulated);
}

ExpertDistribution conditional_expert_dist(const Matrix& reward_rows,
                                           const Vector& label_dist) {
  if (reward_rows.rows() != label_dist.size())
    throw InvalidInput("conditional_expert_dist: one reward row per label");
  if ((reward_rows.array() < 0.0).any())
    throw InvalidInput("conditional_expert_dist: negative reward");
  if ((label_dist.array() < 0.0).any() ||
      std::abs(label_dist.sum() - 1.0) > 1e-9)
    throw InvalidInput("conditional_expert_dist: label_dist not a distribution");
  const Vector expected = reward_rows.transpose() * label_dist;
  ExpertDistribution out;
  out.big_c = expected.sum();
  const auto p = expected.size();
  if (out.big_c <= 0.0) {
    out.big_c = 0.0;
    out.zero_mass = true;
    out.probs = Vector::Constant(p, 1.0 / static_cast<double>(p));
    return out;
  }
  out.probs = expected / out.big_c;
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["num_samples"] = num_samples;
  j["deferral_loss"] = deferral_loss;
  for (Eigen::Index k = 0; k < ratios.size(); ++k)
    j["ratio_" + std::to_string(k + 1)] = ratios(k);
  return j.dump();
}

EvalReport evaluate_selections(const std::vector<int>& selected,
                               const CostTensor& costs) {
  if (selected.empty()) throw InvalidInput("evaluate: empty dataset");
  if (static_cast<int>(selected.size()) != costs.size())
    throw InvalidInput("evaluate: selections and costs differ in length");
  const int p = costs.num_experts();
  EvalReport report;
  report.num_samples = static_cast<int>(selected.size());
  report.ratios = Vector::Zero(p);
  double total = 0.0;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const int k = selected[i];
    if (k < 0 || k >= p) throw InvalidInput("evaluate: expert out of range");
    total += costs.values(static_cast<Eigen::Index>(i), k);
    report.ratios(k) += 1.0;
  }
  report.deferral_loss = total / report.num_samples;
  report.ratios /= static_cast<double>(report.num_samples);
  return report;
}

EvalReport evaluate(const Router& router, const Dataset& data,
                    const CostTensor& costs) {
  if (data.size() == 0) throw InvalidInput("evaluate: empty dataset");
  if (costs.size() != data.size() || costs.num_experts() != router.num_experts())
    throw InvalidInput("evaluate: dimension mismatch");
  const Matrix scores = router.score_rows(data.features);
  std::vector<int> selected(static_cast<std::size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i)
    selected[static_cast<std::size_t>(i)] =
        select_expert(scores.row(i).transpose());
  return evaluate_selections(selected, costs);
}

std::vector<int> lowest_cost_experts(const CostTensor& costs) {
  std::vector<int> out(static_cast<std::size_t>(costs.size()));
  for (int i = 0; i < costs.size(); ++i) {
    int best = 0;
    for (int k = 1; k < costs.num_experts(); ++k)
      if (costs.values(i, k) <= costs.values(i, best)) best = k;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace mild

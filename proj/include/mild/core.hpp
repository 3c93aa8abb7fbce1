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

// Domain types for two-stage learning to defer: datasets, expert panels,
// cost and reward tensors, linear routers over a fixed feature map, and the
// exact deferral loss every surrogate is measured against.
//
// Indexing: experts and labels are 1-based wherever they leave the library
// (files, reports); every in-memory index is 0-based. "Highest index" tie
// breaking is the same rule under both conventions.

#ifndef MILD_CORE_HPP_
#define MILD_CORE_HPP_

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mild {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IntMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class CostType { kErrorOnly, kErrorPlusCost };
enum class RewardScheme { kLemma1, kLemma2 };

std::string to_string(CostType type);
std::string to_string(RewardScheme scheme);
CostType parse_cost_type(const std::string& text);
RewardScheme parse_reward_scheme(const std::string& text);

// Features are one row per sample. Labels are 1-based classes in [1, c].
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 0;
  // Oracle mode only: row i is p(y | x_i) over the c classes.
  std::optional<Matrix> conditional_label_dist;

  int size() const { return static_cast<int>(labels.size()); }
  int dim() const { return static_cast<int>(features.cols()); }

  // Throws InvalidInput when any invariant fails.
  void validate() const;
  Dataset subset(const std::vector<int>& rows) const;
};

struct ExpertPanel {
  IntMatrix predictions;  // m x p, 1-based labels
  Vector beta;            // inference-cost constants, one per expert
  std::vector<std::vector<int>> coverage;  // optional, 1-based classes

  int num_experts() const { return static_cast<int>(beta.size()); }
  void validate(int num_classes) const;
  ExpertPanel subset(const std::vector<int>& rows) const;
};

struct CostTensor {
  Matrix values;  // m x p, entries in [0, 1]
  CostType cost_type = CostType::kErrorOnly;
  double normalizer = 1.0;

  int size() const { return static_cast<int>(values.rows()); }
  int num_experts() const { return static_cast<int>(values.cols()); }
  void validate() const;
  CostTensor subset(const std::vector<int>& rows) const;
};

// Raw cost 1{g_k(x) != y} (+ beta_k), divided by 1 + max_k beta_k when the
// inference term is present so every entry stays in [0, 1].
CostTensor costs_from_panel(const Dataset& data, const ExpertPanel& panel,
                            CostType type);

struct RewardTensor {
  Matrix values;
  RewardScheme scheme = RewardScheme::kLemma1;
};

// Lemma1: sum of the other experts' costs. Lemma2: one minus own cost.
Vector rewards_row(const Vector& costs_row, RewardScheme scheme);
RewardTensor rewards_from_costs(const CostTensor& costs, RewardScheme scheme);

// Constant K(c) with L_def = sum_k reward_k 1{margin_k <= 0} + K(c).
double reformulation_constant(const Vector& costs_row, RewardScheme scheme);

struct MarginVector {
  Vector rho;

  MarginVector() = default;
  explicit MarginVector(Vector values);
  static MarginVector uniform(int p, double value = 1.0);
  int size() const { return static_cast<int>(rho.size()); }
  double operator[](int k) const { return rho(k); }
};

enum class FeatureMapKind { kIdentity, kRandomFourier };

struct FeatureMapSpec {
  FeatureMapKind kind = FeatureMapKind::kIdentity;
  double bandwidth = 1.0;
  int output_dim = 0;
  std::uint64_t seed = 0;
  bool append_bias = true;
};

// phi(x) = [x, 1] (identity) or [sqrt(2/D) cos(W x + b), 1] with
// W ~ N(0, 1/bandwidth^2) and b ~ U[0, 2 pi). The projection is fully
// determined by (spec, input_dim), so routers serialize by spec alone.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(FeatureMapSpec spec, int input_dim);

  const FeatureMapSpec& spec() const { return spec_; }
  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }

  Vector apply(const Eigen::Ref<const Vector>& x) const;
  Matrix apply_rows(const Matrix& x) const;

 private:
  FeatureMapSpec spec_;
  int input_dim_ = 0;
  int output_dim_ = 0;
  Matrix projection_;
  Vector phase_;
};

// Index of the largest score; exact ties go to the highest index.
int select_expert(const Eigen::Ref<const Vector>& scores);

// f(x, k) - max_{k' != k} f(x, k').
double margin(const Eigen::Ref<const Vector>& scores, int k);

class Router {
 public:
  Router() = default;
  Router(FeatureMap map, Matrix weights);
  Router(FeatureMap map, int num_experts);

  const FeatureMap& feature_map() const { return map_; }
  const Matrix& weights() const { return weights_; }
  Matrix& mutable_weights() { return weights_; }
  int num_experts() const { return static_cast<int>(weights_.rows()); }

  Vector scores(const Eigen::Ref<const Vector>& x) const;
  Vector scores_from_features(const Eigen::Ref<const Vector>& phi) const;
  // One row of scores per sample.
  Matrix score_rows(const Matrix& x) const;
  int predict(const Eigen::Ref<const Vector>& x) const;

 private:
  FeatureMap map_;
  Matrix weights_;  // p x D
};

// c_{f(x)}(x, y) for the expert the scores select.
double deferral_loss(const Eigen::Ref<const Vector>& scores,
                     const Eigen::Ref<const Vector>& costs_row);
double deferral_loss(const Router& router, const Eigen::Ref<const Vector>& x,
                     const Eigen::Ref<const Vector>& costs_row);

// |L_def - (sum_k reward_k 1{margin_k <= 0} + K)|. Zero whenever the top
// score is unique; exact ties put every tied expert at margin 0.
double reformulation_residual(const Eigen::Ref<const Vector>& scores,
                              const Eigen::Ref<const Vector>& costs_row,
                              RewardScheme scheme);

struct ExpertDistribution {
  Vector probs;
  double big_c = 0.0;
  bool zero_mass = false;
};

// reward_rows has one row per label y (c x p); label_dist is p(y | x).
// probs(k) = E_y[reward_k] / C(x) with C(x) = E_y[sum_k reward_k].
ExpertDistribution conditional_expert_dist(const Matrix& reward_rows,
                                           const Vector& label_dist);

struct EvalReport {
  int num_samples = 0;
  double deferral_loss = 0.0;
  Vector ratios;  // fraction routed to each expert

  std::string to_json() const;
};

EvalReport evaluate_selections(const std::vector<int>& selected,
                               const CostTensor& costs);
EvalReport evaluate(const Router& router, const Dataset& data,
                    const CostTensor& costs);

// Expert with the lowest cost in each row, ties to the highest index.
std::vector<int> lowest_cost_experts(const CostTensor& costs);

}  // namespace mild

#endif  // MILD_CORE_HPP_

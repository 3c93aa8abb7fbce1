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

// Regularized empirical objectives for MILD and the TDEF baseline, the
// mini-batch optimizer, margin allocation and the margin-bound terms.

#ifndef MILD_TRAIN_HPP_
#define MILD_TRAIN_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "mild/core.hpp"
#include "mild/losses.hpp"

namespace mild {

enum class Method { kMild, kTdef, kOracle };

std::string to_string(Method method);
Method parse_method(const std::string& text);

struct FixedRho {
  MarginVector rhos;
};

// rho_bar <= 0 means "one per expert", i.e. the same total margin as the
// all-ones baseline.
struct FormulaRho {
  double rho_bar = 0.0;
};

// Validation search around the formula allocation. Each group's unnormalized
// center (m_j X_j^2)^(1/3) is moved by t * step for t in [-halfwidth,
// halfwidth], one coordinate at a time, and renormalized to rho_bar.
// folds == 1 scores candidates on one validation split; folds > 1 uses k-fold
// cross-validation and ignores validation_split.
struct ValidatedRho {
  double rho_bar = 0.0;
  int halfwidth = 5;
  double step = 1.0;
  double validation_split = 0.2;
  int folds = 1;
};

using RhoMode = std::variant<FixedRho, FormulaRho, ValidatedRho>;

struct TrainConfig {
  double lambda = 1e-3;
  double learning_rate = 0.5;
  int epochs = 100;
  int batch_size = 0;  // 0 or >= sample count: full batch
  std::uint64_t seed = 0;
  RhoMode rho_mode = FormulaRho{};
  FeatureMapSpec feature_map;
  SurrogateSpec surrogate;
  double holdout_fraction = 0.2;

  void validate() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(int epoch);
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

// Group statistics behind the margin allocation: each sample belongs to its
// lowest-cost expert; norms are the largest feature-map norm in each group
// (the overall largest norm for empty groups).
struct GroupStats {
  std::vector<int> groups;
  Vector counts;
  Vector norms;
};

GroupStats group_statistics(const Matrix& mapped_features,
                            const CostTensor& costs);

// (m_j X_j^2)^(1/3).
Vector rho_centers(const Vector& counts, const Vector& norms);

// rho_j = rho_bar * center_j / sum(center). Zero centers get 1e-3 rho_bar / p
// and the rest share what remains, so the entries always sum to rho_bar.
MarginVector allocate_rho(const Vector& centers, double rho_bar);

MarginVector optimal_rho(const Vector& counts, const Vector& norms,
                         double rho_bar);

struct BoundInputs {
  Vector counts;  // m_j
  Vector norms;   // X_j
  double hypothesis_norm = 1.0;  // F
  int m = 0;
  int p = 0;
  double delta = 0.05;

  void validate() const;
};

// (4 sqrt(2) p F / m) sqrt(sum_j m_j X_j^2 / rho_j^2).
double bound_second_term(const BoundInputs& inputs, const MarginVector& rhos);

// 3 sqrt(log(2 / delta) / (2 m)).
double bound_confidence_term(const BoundInputs& inputs);

// Mean surrogate over samples; spec (tau = 1, Sum) is the MILD objective
// without the regularizer.
double empirical_margin_loss(const Router& router, const Dataset& data,
                             const RewardTensor& rewards,
                             const MarginVector& rhos,
                             const SurrogateSpec& spec);

struct ObjectiveValue {
  double value = 0.0;
  Matrix gradient;  // same shape as the weights
};

// mean_{i in rows} surrogate(W phi_i) + lambda ||W||_F^2 and its gradient.
ObjectiveValue regularized_objective(const Matrix& mapped_features,
                                     const Matrix& rewards,
                                     const std::vector<int>& rows,
                                     const Matrix& weights,
                                     const MarginVector& rhos,
                                     const SurrogateSpec& spec, double lambda);

struct TraceRow {
  int epoch = 0;
  double objective = 0.0;
  double val_dl = 0.0;
  Vector ratios;
};

struct TrainResult {
  Router router;
  MarginVector rhos;
  std::vector<TraceRow> trace;
  std::vector<Matrix> weight_history;  // only when requested
  std::vector<int> train_rows;
  std::vector<int> holdout_rows;
};

struct TrainOptions {
  bool record_weights = false;
};

TrainResult train(const Dataset& data, const CostTensor& costs,
                  RewardScheme scheme, const TrainConfig& config, Method method,
                  const TrainOptions& options = {});

MarginVector select_rho(const Dataset& data, const CostTensor& costs,
                        RewardScheme scheme, const TrainConfig& config,
                        double validation_split);

// epoch,objective,val_dl,ratio_1..ratio_p
std::string trace_to_csv(const std::vector<TraceRow>& trace);

}  // namespace mild

#endif  // MILD_TRAIN_HPP_

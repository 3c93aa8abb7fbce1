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

// Brute-force verifiers on finite instances: Bayes routing, grid checks of
// the consistency bounds, Monte-Carlo class-sensitive Rademacher complexity
// and exact-expectation replicas of the reward reformulation.
//
// The grid checks are necessary-condition tests. A finite score grid is not a
// complete hypothesis set, so grid infima stand in for true infima and the
// minimizability gaps are taken as zero.

#ifndef MILD_ORACLE_HPP_
#define MILD_ORACLE_HPP_

#include <cstdint>
#include <vector>

#include "mild/core.hpp"

namespace mild {

struct ScoreGrid {
  double lo = -3.0;
  double hi = 3.0;
  double step = 0.5;

  std::vector<double> values() const;
  int points() const { return static_cast<int>(values().size()); }
};

struct DiscretePoint {
  double marginal = 0.0;
  Vector label_dist;  // p(y | x), length c
  Matrix costs;       // c x p: cost of expert k when the label is y
};

struct DiscreteInstance {
  std::vector<DiscretePoint> points;
  ScoreGrid grid;

  int num_classes() const;
  int num_experts() const;
  void validate() const;
};

// Empirical mode: one point per sample with mass 1/m and a point-mass label
// distribution on the observed label.
DiscreteInstance instance_from_dataset(const Dataset& data,
                                       const CostTensor& costs);

// point,marginal,label,label_prob,cost_1..cost_p (one row per point and label)
std::string instance_to_csv(const DiscreteInstance& instance);
DiscreteInstance instance_from_csv(const std::string& text);

struct BayesResult {
  std::vector<int> choices;  // 0-based expert per point
  double deferral_loss = 0.0;
  Vector ratios;
};

// Per point argmin_k E_{y|x}[c_k(x, y)], ties to the highest index.
BayesResult bayes_router(const DiscreteInstance& instance);

// ell_def at one input: expected loss C * sum_k probs_k 1{margin_k <= 0}.
struct CostSensitivePoint {
  double marginal = 1.0;
  Vector probs;
  double big_c = 1.0;
};

// Rewards are rescaled by the largest C(x) so every big_c lands in [0, 1].
struct CostSensitiveInstance {
  std::vector<CostSensitivePoint> points;
  double reward_scale = 1.0;
};
CostSensitiveInstance to_cost_sensitive(const DiscreteInstance& instance,
                                        RewardScheme scheme);

class BudgetExceeded : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

struct BoundCheckReport {
  long long routers = 0;     // grid routers covered by the check
  long long violations = 0;  // lhs > rhs + slack
  double slack = 0.0;        // 2 * grid step
  double lipschitz_slack = 0.0;
  double worst_lhs = 0.0;    // at the router maximizing lhs - rhs
  double worst_rhs = 0.0;
  double max_gap = 0.0;      // max over routers of lhs - rhs
  // Same comparison with the surrogate infimum over all real score vectors
  // (convex minimization) instead of over the grid, and no slack.
  double strict_max_gap = 0.0;
  bool holds = false;
  bool holds_strict = false;
};

// lhs = E_L(f) - inf E_L, rhs = sqrt(2 (E_S(f) - inf E_S)) at a single point,
// for every grid score vector f. Refuses p > 4 or more than 21 grid points.
BoundCheckReport check_consistency_bound(const CostSensitivePoint& point,
                                         const MarginVector& rhos,
                                         const ScoreGrid& grid);

// Multi-point version. Routers pick an independent grid vector per point, so
// the infima decompose pointwise; each point is reduced to its Pareto set of
// (target loss, surrogate loss) pairs before the product is enumerated.
BoundCheckReport check_excess_error_bound(
    const std::vector<CostSensitivePoint>& points, const MarginVector& rhos,
    const ScoreGrid& grid);

// inf over real score vectors of big_c * sum_k probs_k tilde_ell(f, k).
double surrogate_infimum(const CostSensitivePoint& point,
                         const MarginVector& rhos);

struct RademacherEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  double analytic_bound = 0.0;  // sqrt(p) F / m sqrt(sum_j m_j X_j^2 / rho_j^2)
  double coarse_bound = 0.0;    // with X_j replaced by max_j X_j
  int trials = 0;
};

// Per-trial value of sup over ||W||_F <= F of
// (1/m) sum_i sum_k eps_ik f(x_i, k) / rho_{g(i)}; closed form
// F / m * || sum_i eps_i phi_i^T / rho_{g(i)} ||_F.
std::vector<double> rademacher_trials(const Matrix& mapped_features,
                                      const std::vector<int>& groups,
                                      const MarginVector& rhos,
                                      double hypothesis_norm, int trials,
                                      std::uint64_t seed);

RademacherEstimate mc_class_sensitive_rademacher(
    const Matrix& mapped_features, const std::vector<int>& groups,
    const MarginVector& rhos, double hypothesis_norm, int trials,
    std::uint64_t seed);

struct TransferResult {
  double deferral_risk = 0.0;      // E_D[L_def]
  double input_expert_risk = 0.0;  // E_P[C(x) 1{margin <= 0}]
  double constant = 0.0;           // E_D[K(c)]
  double residual = 0.0;
};

// `scores` holds one row of router scores per instance point.
TransferResult expectation_transfer_check(const DiscreteInstance& instance,
                                          const Matrix& scores,
                                          RewardScheme scheme);

}  // namespace mild

#endif  // MILD_ORACLE_HPP_

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

// Margin losses and their smooth surrogates over a score vector f(x, .).
// Everything here is a pure function of (scores, weights, margins).

#ifndef MILD_LOSSES_HPP_
#define MILD_LOSSES_HPP_

#include "mild/core.hpp"

namespace mild {

// Exponents are clamped to +/- this before exp() so that margins as small as
// 0.1 cannot push a term past the double range.
inline constexpr double kExpSaturation = 700.0;

enum class Aggregation { kMax, kSum };

// Comp-sum family Phi^tau with tau = 1 the logistic case and tau = 0 the
// exponential case.
struct SurrogateSpec {
  double tau = 1.0;
  Aggregation aggregation = Aggregation::kSum;

  void validate() const;
};

// min(1, max(0, 1 - u / rho)).
double rho_margin(double u, double rho);

// ((1 + u)^(1 - tau) - 1) / (1 - tau), or log(1 + u) at tau = 1.
double comp_sum_phi(double u, double tau);

// L_rho(f, x, k) = max_k' c(k, k') Phi_{rho_k}(f_k - f_k'). `pair_costs(k')`
// holds c(x, k, k') and must vanish at k' = k.
double cs_margin_loss(const Eigen::Ref<const Vector>& scores, int k,
                      const Eigen::Ref<const Vector>& pair_costs,
                      const MarginVector& rhos);

// log sum_k' exp((f_k' - f_k) / rho_k), max-shifted.
double surrogate_tilde_ell(const Eigen::Ref<const Vector>& scores, int k,
                           const MarginVector& rhos);

struct UpperChain {
  double l_margin = 0.0;
  double l_max = 0.0;
  double l_sum = 0.0;
};

// C Phi_{rho_k}(margin_k) <= C log2(1 + max_{k'!=k} e^z) <= C log2 sum_k' e^z,
// with z = (f_k' - f_k) / rho_k. The logistic is taken in base 2 so that it
// dominates the ramp at zero margin; l_sum is therefore
// big_c * surrogate_tilde_ell / ln 2.
UpperChain surrogate_upper_chain(const Eigen::Ref<const Vector>& scores, int k,
                                 double big_c, const MarginVector& rhos);

// sum_k reward_k * surrogate_tilde_ell(scores, k).
double mild_surrogate(const Eigen::Ref<const Vector>& scores,
                      const Eigen::Ref<const Vector>& rewards,
                      const MarginVector& rhos);

// The baseline: mild_surrogate with every margin equal to one.
double tdef_surrogate(const Eigen::Ref<const Vector>& scores,
                      const Eigen::Ref<const Vector>& rewards);

// d mild_surrogate / d scores.
Vector grad_mild(const Eigen::Ref<const Vector>& scores,
                 const Eigen::Ref<const Vector>& rewards,
                 const MarginVector& rhos);

// Per-target comp-sum term for the class-independent cost case:
//   Sum: (1/(1-tau)) sum_{k'!=k} ((1 + e^z)^(1-tau) - 1)
//   Max: the same with the sum replaced by a max
// At tau = 1 the Sum form is log sum_k' e^z (= surrogate_tilde_ell) and the
// Max form is log(1 + max_{k'!=k} e^z).
double comp_sum_term(const Eigen::Ref<const Vector>& scores, int k,
                     const MarginVector& rhos, const SurrogateSpec& spec);

// sum_k reward_k comp_sum_term(k) and its score gradient. Only the Sum
// aggregation has a gradient.
double comp_sum_surrogate(const Eigen::Ref<const Vector>& scores,
                          const Eigen::Ref<const Vector>& rewards,
                          const MarginVector& rhos, const SurrogateSpec& spec);
Vector grad_comp_sum_surrogate(const Eigen::Ref<const Vector>& scores,
                               const Eigen::Ref<const Vector>& rewards,
                               const MarginVector& rhos,
                               const SurrogateSpec& spec);

// Non-constant-cost logistic bound log sum_{k'!=k} (1 + e^z)^{c(k, k')}.
// Dominates the max form max_{k'!=k} c(k,k') log(1 + e^z).
double cost_weighted_logistic_bound(const Eigen::Ref<const Vector>& scores,
                                    int k,
                                    const Eigen::Ref<const Vector>& pair_costs,
                                    const MarginVector& rhos);
double cost_weighted_logistic_max(const Eigen::Ref<const Vector>& scores,
                                  int k,
                                  const Eigen::Ref<const Vector>& pair_costs,
                                  const MarginVector& rhos);

}  // namespace mild

#endif  // MILD_LOSSES_HPP_

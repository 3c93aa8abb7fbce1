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

#include "mild/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mild {
namespace {

double clamp_exponent(double z) {
  return std::clamp(z, -kExpSaturation, kExpSaturation);
}

// log(1 + e^z) without overflow.
double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

void check_target(const Eigen::Ref<const Vector>& scores, int k,
                  const MarginVector& rhos) {
  if (scores.size() != rhos.size())
    throw InvalidInput("surrogate: scores and margins differ in length");
  if (k < 0 || k >= scores.size())
    throw InvalidInput("surrogate: target expert out of range");
}

// Shifted exponents z_k' = (f_k' - f_k) / rho_k.
Vector exponents(const Eigen::Ref<const Vector>& scores, int k,
                 const MarginVector& rhos) {
  return (scores.array() - scores(k)) / rhos[k];
}

double log_sum_exp(const Vector& z) {
  const double top = z.maxCoeff();
  return top + std::log((z.array() - top).exp().sum());
}

double max_excluding(const Vector& z, int k) {
  double top = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < z.size(); ++j)
    if (j != k) top = std::max(top, z(j));
  return top;
}

// (1 / (1 - tau)) ((1 + e^z)^(1 - tau) - 1) for tau != 1.
double comp_sum_pair(double z, double tau) {
  const double power = clamp_exponent((1.0 - tau) * softplus(z));
  return std::expm1(power) / (1.0 - tau);
}

// Derivative of comp_sum_pair in z: e^z (1 + e^z)^(-tau).
double comp_sum_pair_slope(double z, double tau) {
  return std::exp(clamp_exponent(z - tau * softplus(z)));
}

}  // namespace

void SurrogateSpec::validate() const {
  if (!(tau >= 0.0) || !std::isfinite(tau))
    throw InvalidInput("surrogate spec: tau must be >= 0");
}

double rho_margin(double u, double rho) {
  if (!(rho > 0.0)) throw InvalidInput("rho_margin: rho must be positive");
  return std::min(1.0, std::max(0.0, 1.0 - u / rho));
}

double comp_sum_phi(double u, double tau) {
  if (u < 0.0) throw InvalidInput("comp_sum_phi: u must be >= 0");
  if (!(tau >= 0.0)) throw InvalidInput("comp_sum_phi: tau must be >= 0");
  if (tau == 1.0) return std::log1p(u);
  const double power = (1.0 - tau) * std::log1p(u);
  return std::expm1(power) / (1.0 - tau);
}

double cs_margin_loss(const Eigen::Ref<const Vector>& scores, int k,
                      const Eigen::Ref<const Vector>& pair_costs,
                      const MarginVector& rhos) {
  check_target(scores, k, rhos);
  if (pair_costs.size() != scores.size())
    throw InvalidInput("cs_margin_loss: one cost per competing expert");
  if (pair_costs(k) != 0.0)
    throw InvalidInput("cs_margin_loss: c(x, k, k) must be zero");
  if (pair_costs.minCoeff() < 0.0 || pair_costs.maxCoeff() > 1.0)
    throw InvalidInput("cs_margin_loss: costs must lie in [0, 1]");
  double worst = 0.0;
  for (int j = 0; j < scores.size(); ++j)
    worst = std::max(worst,
                     pair_costs(j) * rho_margin(scores(k) - scores(j), rhos[k]));
  return worst;
}

double surrogate_tilde_ell(const Eigen::Ref<const Vector>& scores, int k,
                           const MarginVector& rhos) {
  check_target(scores, k, rhos);
  return log_sum_exp(exponents(scores, k, rhos));
}

UpperChain surrogate_upper_chain(const Eigen::Ref<const Vector>& scores, int k,
                                 double big_c, const MarginVector& rhos) {
  check_target(scores, k, rhos);
  if (big_c < 0.0) throw InvalidInput("upper chain: big_c must be >= 0");
  const Vector z = exponents(scores, k, rhos);
  double ramp = 0.0;
  for (int j = 0; j < scores.size(); ++j)
    if (j != k) ramp = std::max(ramp, rho_margin(scores(k) - scores(j), rhos[k]));
  UpperChain chain;
  chain.l_margin = big_c * ramp;
  chain.l_max = big_c * softplus(max_excluding(z, k)) / std::numbers::ln2;
  chain.l_sum = big_c * log_sum_exp(z) / std::numbers::ln2;
  return chain;
}

double mild_surrogate(const Eigen::Ref<const Vector>& scores,
                      const Eigen::Ref<const Vector>& rewards,
                      const MarginVector& rhos) {
  if (rewards.size() != scores.size())
    throw InvalidInput("mild_surrogate: one reward per expert");
  double total = 0.0;
  for (int k = 0; k < scores.size(); ++k)
    if (rewards(k) != 0.0) total += rewards(k) * surrogate_tilde_ell(scores, k, rhos);
  return total;
}

double tdef_surrogate(const Eigen::Ref<const Vector>& scores,
                      const Eigen::Ref<const Vector>& rewards) {
  return mild_surrogate(scores, rewards,
                        MarginVector::uniform(static_cast<int>(scores.size())));
}

Vector grad_mild(const Eigen::Ref<const Vector>& scores,
                 const Eigen::Ref<const Vector>& rewards,
                 const MarginVector& rhos) {
  if (rewards.size() != scores.size() || rhos.size() != scores.size())
    throw InvalidInput("grad_mild: dimension mismatch");
  const auto p = scores.size();
  Vector grad = Vector::Zero(p);
  for (int k = 0; k < p; ++k) {
    if (rewards(k) == 0.0) continue;
    const Vector z = exponents(scores, k, rhos);
    Vector soft = (z.array() - z.maxCoeff()).exp();
    soft /= soft.sum();
    soft(k) -= 1.0;
    grad += (rewards(k) / rhos[k]) * soft;
  }
  return grad;
}

double comp_sum_term(const Eigen::Ref<const Vector>& scores, int k,
                     const MarginVector& rhos, const SurrogateSpec& spec) {
  check_target(scores, k, rhos);
  spec.validate();
  const Vector z = exponents(scores, k, rhos);
  if (spec.tau == 1.0) {
    return spec.aggregation == Aggregation::kSum ? log_sum_exp(z)
                                                 : softplus(max_excluding(z, k));
  }
  if (spec.aggregation == Aggregation::kMax)
    return comp_sum_pair(max_excluding(z, k), spec.tau);
  double total = 0.0;
  for (int j = 0; j < z.size(); ++j)
    if (j != k) total += comp_sum_pair(z(j), spec.tau);
  return total;
}

double comp_sum_surrogate(const Eigen::Ref<const Vector>& scores,
                          const Eigen::Ref<const Vector>& rewards,
                          const MarginVector& rhos, const SurrogateSpec& spec) {
  if (rewards.size() != scores.size())
    throw InvalidInput("comp_sum_surrogate: one reward per expert");
  double total = 0.0;
  for (int k = 0; k < scores.size(); ++k)
    if (rewards(k) != 0.0) total += rewards(k) * comp_sum_term(scores, k, rhos, spec);
  return total;
}

Vector grad_comp_sum_surrogate(const Eigen::Ref<const Vector>& scores,
                               const Eigen::Ref<const Vector>& rewards,
                               const MarginVector& rhos,
                               const SurrogateSpec& spec) {
  spec.validate();
  if (spec.aggregation != Aggregation::kSum)
    throw InvalidInput("gradient: only the sum aggregation is differentiable");
  if (spec.tau == 1.0) return grad_mild(scores, rewards, rhos);
  if (rewards.size() != scores.size() || rhos.size() != scores.size())
    throw InvalidInput("gradient: dimension mismatch");
  const auto p = scores.size();
  Vector grad = Vector::Zero(p);
  for (int k = 0; k < p; ++k) {
    if (rewards(k) == 0.0) continue;
    const double weight = rewards(k) / rhos[k];
    const Vector z = exponents(scores, k, rhos);
    for (int j = 0; j < p; ++j) {
      if (j == k) continue;
      const double slope = weight * comp_sum_pair_slope(z(j), spec.tau);
      grad(j) += slope;
      grad(k) -= slope;
    }
  }
  return grad;
}

double cost_weighted_logistic_bound(const Eigen::Ref<const Vector>& scores,
                                    int k,
                                    const Eigen::Ref<const Vector>& pair_costs,
                                    const MarginVector& rhos) {
  check_target(scores, k, rhos);
  if (scores.size() < 2)
    throw InvalidInput("cost_weighted_logistic_bound: need p >= 2");
  const Vector z = exponents(scores, k, rhos);
  Vector terms(z.size() - 1);
  for (int j = 0, t = 0; j < z.size(); ++j)
    if (j != k) terms(t++) = pair_costs(j) * softplus(z(j));
  return log_sum_exp(terms);
}

double cost_weighted_logistic_max(const Eigen::Ref<const Vector>& scores,
                                  int k,
                                  const Eigen::Ref<const Vector>& pair_costs,
                                  const MarginVector& rhos) {
  check_target(scores, k, rhos);
  const Vector z = exponents(scores, k, rhos);
  double top = 0.0;
  for (int j = 0; j < z.size(); ++j)
    if (j != k) top = std::max(top, pair_costs(j) * softplus(z(j)));
  return top;
}

}  // namespace mild

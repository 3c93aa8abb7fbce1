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

// Randomized verification suites over the loss, training and oracle modules.
// Every case draws from its own generator seeded by (suite seed, case index),
// so a failing case can be replayed alone.

#ifndef MILD_CHECKS_HPP_
#define MILD_CHECKS_HPP_

#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "mild/core.hpp"

namespace mild {

struct SuiteResult {
  std::string name;
  int cases = 0;
  int failures = 0;
  double worst = 0.0;  // suite-specific statistic, see each suite
  std::vector<std::string> failing;  // replay descriptions, capped
  double seconds = 0.0;

  bool passed() const { return cases > 0 && failures == 0; }
};

// Generator for case `index` of a suite run with `seed`.
std::mt19937_64 case_rng(std::uint64_t seed, int index);

// Reformulation residual for both reward schemes, p in [2, 6]. worst = max
// residual; tolerance 1e-12.
SuiteResult check_lemma_suite(int cases, std::uint64_t seed);

// Exhaustive-sum transfer identity on random discrete instances. worst = max
// residual; tolerance 1e-12.
SuiteResult check_transfer_suite(int instances, std::uint64_t seed);

// l_margin <= l_max <= l_sum. worst = most negative slack; tolerance -1e-12.
SuiteResult check_chain_suite(int draws, std::uint64_t seed);

using ScoreGradient = std::function<Vector(const Eigen::Ref<const Vector>&,
                                           const Eigen::Ref<const Vector>&,
                                           const MarginVector&)>;

// Gradient of the regularized MILD objective against central differences.
// Without `gradient` the trainer's own objective gradient is tested; with it,
// the weight gradient is assembled from the given score gradient. worst =
// max relative error; tolerance 1e-4.
SuiteResult check_gradient_suite(int configs, std::uint64_t seed,
                                 const ScoreGradient& gradient = {});

// Formula margins against a refined grid minimum of bound_second_term under
// the same total margin. worst = max (formula - grid) / grid; tolerance 1%.
SuiteResult check_rho_suite(int problems, std::uint64_t seed);

// Grid checks of the single-point and multi-point excess bounds, p <= 3.
// worst = max lhs - rhs; fails on any violation beyond the grid slack.
SuiteResult check_bound_suite(int single_points, int multi_points,
                              std::uint64_t seed);

// Monte-Carlo class-sensitive complexity against the analytic term. worst =
// max (estimate - analytic) / std_error; fails above 3.
SuiteResult check_rademacher_suite(int configs, std::uint64_t seed);

enum class CheckTier { kFast, kFull };

CheckTier parse_check_tier(const std::string& text);

// Runs every suite, printing one summary line per suite (plus failing cases)
// to `log` when given.
std::vector<SuiteResult> run_checks(CheckTier tier, std::uint64_t seed,
                                    std::ostream* log);

}  // namespace mild

#endif  // MILD_CHECKS_HPP_

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

#include "mild/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "mild/losses.hpp"
#include "mild/oracle.hpp"
#include "mild/train.hpp"

namespace mild {
namespace {

constexpr std::size_t kMaxListed = 10;

using Clock = std::chrono::steady_clock;

class SuiteRun {
 public:
  explicit SuiteRun(std::string name) : start_(Clock::now()) {
    result_.name = std::move(name);
  }

  void record(bool ok, const std::string& replay) {
    ++result_.cases;
    if (ok) return;
    ++result_.failures;
    if (result_.failing.size() < kMaxListed) result_.failing.push_back(replay);
  }

  SuiteResult& result() { return result_; }

  SuiteResult finish() {
    result_.seconds =
        std::chrono::duration<double>(Clock::now() - start_).count();
    return result_;
  }

 private:
  SuiteResult result_;
  Clock::time_point start_;
};

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vector normal_vector(std::mt19937_64& rng, int n, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

// Random point of the simplex; a vertex one time in eight.
Vector random_distribution(std::mt19937_64& rng, int n) {
  Vector v(n);
  if (uniform_int(rng, 0, 7) == 0) {
    v.setZero();
    v(uniform_int(rng, 0, n - 1)) = 1.0;
    return v;
  }
  std::exponential_distribution<double> expo(1.0);
  for (int i = 0; i < n; ++i) v(i) = expo(rng);
  return v / v.sum();
}

// Costs in [0, 1]; binary half of the time.
Vector random_costs(std::mt19937_64& rng, int p) {
  Vector c(p);
  const bool binary = uniform_int(rng, 0, 1) == 0;
  for (int k = 0; k < p; ++k)
    c(k) = binary ? static_cast<double>(uniform_int(rng, 0, 1))
                  : uniform_real(rng, 0.0, 1.0);
  return c;
}

MarginVector random_margins(std::mt19937_64& rng, int p, double lo,
                            double hi) {
  Vector rho(p);
  for (int k = 0; k < p; ++k) rho(k) = uniform_real(rng, lo, hi);
  return MarginVector(rho);
}

DiscreteInstance random_instance(std::mt19937_64& rng, int max_points,
                                 int max_classes, int max_experts) {
  DiscreteInstance instance;
  const int n = uniform_int(rng, 1, max_points);
  const int c = uniform_int(rng, 2, max_classes);
  const int p = uniform_int(rng, 2, max_experts);
  Vector marginal = random_distribution(rng, n);
  if ((marginal.array() == 0.0).any()) marginal = Vector::Constant(n, 1.0 / n);
  for (int i = 0; i < n; ++i) {
    DiscretePoint pt;
    pt.marginal = marginal(i);
    pt.label_dist = random_distribution(rng, c);
    pt.costs.resize(c, p);
    for (int y = 0; y < c; ++y) pt.costs.row(y) = random_costs(rng, p).transpose();
    instance.points.push_back(std::move(pt));
  }
  return instance;
}

std::string replay(int index, std::uint64_t seed, const std::string& detail) {
  std::ostringstream out;
  out << "case " << index << " (seed " << seed << "): " << detail;
  return out.str();
}

// sum_j a_j / rho_j^2 under sum_j rho_j = total, on a composition grid and
// then by pairwise transfers of shrinking size.
double grid_minimum(const BoundInputs& inputs, double total, int resolution) {
  const auto p = static_cast<int>(inputs.counts.size());
  auto value = [&](const Vector& rho) {
    return bound_second_term(inputs, MarginVector(rho));
  };
  Vector best_rho = Vector::Constant(p, total / p);
  double best = value(best_rho);
  std::vector<int> parts(static_cast<std::size_t>(p), 1);
  // Enumerate compositions of `resolution` into p positive parts.
  std::function<void(int, int)> walk = [&](int j, int left) {
    if (j == p - 1) {
      parts[static_cast<std::size_t>(j)] = left;
      Vector rho(p);
      for (int k = 0; k < p; ++k)
        rho(k) = total * parts[static_cast<std::size_t>(k)] / resolution;
      const double v = value(rho);
      if (v < best) {
        best = v;
        best_rho = rho;
      }
      return;
    }
    for (int n = 1; n <= left - (p - 1 - j); ++n) {
      parts[static_cast<std::size_t>(j)] = n;
      walk(j + 1, left - n);
    }
  };
  walk(0, resolution);

  for (double h = total / resolution / 2.0; h > 1e-9 * total; h /= 2.0) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (int a = 0; a < p; ++a) {
        for (int b = 0; b < p; ++b) {
          if (a == b || best_rho(b) <= h) continue;
          Vector trial = best_rho;
          trial(a) += h;
          trial(b) -= h;
          const double v = value(trial);
          if (v < best) {
            best = v;
            best_rho = trial;
            moved = true;
          }
        }
      }
    }
  }
  return best;
}

}  // namespace

std::mt19937_64 case_rng(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

SuiteResult check_lemma_suite(int cases, std::uint64_t seed) {
  SuiteRun run("lemma");
  for (int i = 0; i < cases; ++i) {
    auto rng = case_rng(seed, i);
    const int p = uniform_int(rng, 2, 6);
    const Vector scores = normal_vector(rng, p, 2.0);
    const Vector costs = random_costs(rng, p);
    double worst = 0.0;
    for (RewardScheme scheme : {RewardScheme::kLemma1, RewardScheme::kLemma2})
      worst = std::max(worst, reformulation_residual(scores, costs, scheme));
    run.result().worst = std::max(run.result().worst, worst);
    std::ostringstream detail;
    detail << "p=" << p << " residual=" << worst;
    run.record(worst <= 1e-12, replay(i, seed, detail.str()));
  }
  return run.finish();
}

SuiteResult check_transfer_suite(int instances, std::uint64_t seed) {
  SuiteRun run("transfer");
  for (int i = 0; i < instances; ++i) {
    auto rng = case_rng(seed, i);
    const DiscreteInstance instance = random_instance(rng, 4, 4, 5);
    const int p = instance.num_experts();
    Matrix scores(static_cast<Eigen::Index>(instance.points.size()), p);
    for (Eigen::Index r = 0; r < scores.rows(); ++r)
      scores.row(r) = normal_vector(rng, p, 2.0).transpose();
    double worst = 0.0;
    for (RewardScheme scheme : {RewardScheme::kLemma1, RewardScheme::kLemma2})
      worst = std::max(
          worst, expectation_transfer_check(instance, scores, scheme).residual);
    run.result().worst = std::max(run.result().worst, worst);
    std::ostringstream detail;
    detail << "points=" << instance.points.size() << " p=" << p
           << " residual=" << worst;
    run.record(worst < 1e-12, replay(i, seed, detail.str()));
  }
  return run.finish();
}

SuiteResult check_chain_suite(int draws, std::uint64_t seed) {
  SuiteRun run("chain");
  run.result().worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < draws; ++i) {
    auto rng = case_rng(seed, i);
    const int p = uniform_int(rng, 2, 6);
    const Vector scores = normal_vector(rng, p, 3.0);
    const int k = uniform_int(rng, 0, p - 1);
    const double big_c = uniform_real(rng, 0.0, 1.0);
    const MarginVector rhos = random_margins(rng, p, 0.1, 3.0);
    const UpperChain chain = surrogate_upper_chain(scores, k, big_c, rhos);
    const double slack =
        std::min(chain.l_max - chain.l_margin, chain.l_sum - chain.l_max);
    run.result().worst = std::min(run.result().worst, slack);
    std::ostringstream detail;
    detail << "p=" << p << " k=" << k << " slack=" << slack;
    run.record(slack >= -1e-12, replay(i, seed, detail.str()));
  }
  return run.finish();
}

SuiteResult check_gradient_suite(int configs, std::uint64_t seed,
                                 const ScoreGradient& gradient) {
  SuiteRun run(gradient ? "gradient(injected)" : "gradient");
  const SurrogateSpec spec;
  for (int i = 0; i < configs; ++i) {
    auto rng = case_rng(seed, i);
    const int p = uniform_int(rng, 2, 5);
    const int d = uniform_int(rng, 2, 6);
    const int n = uniform_int(rng, 3, 10);
    const double lambda = uniform_real(rng, 0.0, 0.1);
    const MarginVector rhos = random_margins(rng, p, 0.3, 2.0);
    const RewardScheme scheme =
        uniform_int(rng, 0, 1) == 0 ? RewardScheme::kLemma1 : RewardScheme::kLemma2;
    Matrix phi(n, d);
    Matrix rewards(n, p);
    std::vector<int> rows(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
      phi.row(r) = normal_vector(rng, d).transpose();
      rewards.row(r) = rewards_row(random_costs(rng, p), scheme).transpose();
      rows[static_cast<std::size_t>(r)] = r;
    }
    Matrix weights(p, d);
    for (int k = 0; k < p; ++k) weights.row(k) = normal_vector(rng, d).transpose();

    Matrix analytic;
    if (gradient) {
      analytic = 2.0 * lambda * weights;
      for (int r = 0; r < n; ++r) {
        const Vector s = weights * phi.row(r).transpose();
        analytic += gradient(s, rewards.row(r).transpose(), rhos) *
                    phi.row(r) / static_cast<double>(n);
      }
    } else {
      analytic =
          regularized_objective(phi, rewards, rows, weights, rhos, spec, lambda)
              .gradient;
    }
    Matrix numeric(p, d);
    const double h = 1e-5;
    for (int k = 0; k < p; ++k) {
      for (int j = 0; j < d; ++j) {
        Matrix up = weights, down = weights;
        up(k, j) += h;
        down(k, j) -= h;
        const double f_up =
            regularized_objective(phi, rewards, rows, up, rhos, spec, lambda).value;
        const double f_down =
            regularized_objective(phi, rewards, rows, down, rhos, spec, lambda)
                .value;
        numeric(k, j) = (f_up - f_down) / (2.0 * h);
      }
    }
    const double rel =
        (analytic - numeric).norm() / std::max(numeric.norm(), 1e-8);
    run.result().worst = std::max(run.result().worst, rel);
    std::ostringstream detail;
    detail << "p=" << p << " d=" << d << " n=" << n << " rel_error=" << rel;
    run.record(rel < 1e-4, replay(i, seed, detail.str()));
  }
  return run.finish();
}

SuiteResult check_rho_suite(int problems, std::uint64_t seed) {
  SuiteRun run("rho");
  for (int i = 0; i < problems; ++i) {
    auto rng = case_rng(seed, i);
    const int p = uniform_int(rng, 2, 5);
    BoundInputs inputs;
    inputs.counts.resize(p);
    inputs.norms.resize(p);
    for (int j = 0; j < p; ++j) {
      inputs.counts(j) = std::round(std::pow(10.0, uniform_real(rng, 0.0, 3.3)));
      inputs.norms(j) = uniform_real(rng, 0.2, 3.0);
    }
    inputs.m = static_cast<int>(inputs.counts.sum());
    inputs.p = p;
    const double total = uniform_real(rng, 0.5, 2.0) * p;
    const double formula =
        bound_second_term(inputs, optimal_rho(inputs.counts, inputs.norms, total));
    const double grid = grid_minimum(inputs, total, p <= 3 ? 60 : 30);
    const double gap = (formula - grid) / grid;
    run.result().worst = std::max(run.result().worst, gap);
    std::ostringstream detail;
    detail << "p=" << p << " formula=" << formula << " grid=" << grid;
    run.record(gap <= 0.01, replay(i, seed, detail.str()));
  }
  return run.finish();
}

SuiteResult check_bound_suite(int single_points, int multi_points,
                              std::uint64_t seed) {
  SuiteRun run("bound");
  run.result().worst = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < single_points + multi_points; ++i) {
    auto rng = case_rng(seed, i);
    const bool single = i < single_points;
    std::vector<CostSensitivePoint> points;
    ScoreGrid grid;
    int p = 0;
    if (single) {
      p = uniform_int(rng, 2, 3);
      CostSensitivePoint pt;
      pt.probs = random_distribution(rng, p);
      pt.big_c = uniform_real(rng, 0.05, 1.0);
      points.push_back(pt);
    } else {
      const DiscreteInstance instance = random_instance(rng, 3, 3, 3);
      const RewardScheme scheme = uniform_int(rng, 0, 1) == 0
                                      ? RewardScheme::kLemma1
                                      : RewardScheme::kLemma2;
      points = to_cost_sensitive(instance, scheme).points;
      p = instance.num_experts();
      grid = ScoreGrid{-2.0, 2.0, 0.5};
    }
    const MarginVector rhos = random_margins(rng, p, 0.5, 2.0);
    const BoundCheckReport report = check_excess_error_bound(points, rhos, grid);
    run.result().worst = std::max(run.result().worst, report.max_gap);
    std::ostringstream detail;
    detail << (single ? "single" : "multi") << " p=" << p
           << " points=" << points.size() << " max_gap=" << report.max_gap
           << " slack=" << report.slack;
    run.record(report.holds, replay(i, seed, detail.str()));
  }
  return run.finish();
}

SuiteResult check_rademacher_suite(int configs, std::uint64_t seed) {
  SuiteRun run("rademacher");
  run.result().worst = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < configs; ++i) {
    auto rng = case_rng(seed, i);
    const int m = uniform_int(rng, 20, 120);
    const int d = uniform_int(rng, 2, 8);
    const int p = uniform_int(rng, 2, 4);
    Matrix phi(m, d);
    std::vector<int> groups(static_cast<std::size_t>(m));
    const double scale = uniform_real(rng, 0.2, 3.0);
    for (int r = 0; r < m; ++r) {
      phi.row(r) = normal_vector(rng, d, scale).transpose();
      groups[static_cast<std::size_t>(r)] = uniform_int(rng, 0, p - 1);
    }
    const MarginVector rhos = random_margins(rng, p, 0.3, 2.0);
    const double norm = uniform_real(rng, 0.5, 3.0);
    const RademacherEstimate est = mc_class_sensitive_rademacher(
        phi, groups, rhos, norm, 400, rng());
    const double z = (est.estimate - est.analytic_bound) /
                     std::max(est.std_error, 1e-300);
    run.result().worst = std::max(run.result().worst, z);
    std::ostringstream detail;
    detail << "m=" << m << " p=" << p << " estimate=" << est.estimate
           << " analytic=" << est.analytic_bound << " se=" << est.std_error;
    run.record(est.estimate <= est.analytic_bound + 3.0 * est.std_error,
               replay(i, seed, detail.str()));
  }
  return run.finish();
}

CheckTier parse_check_tier(const std::string& text) {
  if (text == "fast") return CheckTier::kFast;
  if (text == "full") return CheckTier::kFull;
  throw InvalidInput("unknown check tier: " + text);
}

std::vector<SuiteResult> run_checks(CheckTier tier, std::uint64_t seed,
                                    std::ostream* log) {
  const bool full = tier == CheckTier::kFull;
  std::vector<SuiteResult> results;
  results.push_back(check_lemma_suite(full ? 1000 : 200, seed));
  results.push_back(check_transfer_suite(full ? 100 : 30, seed));
  results.push_back(check_chain_suite(full ? 1000 : 200, seed));
  results.push_back(check_gradient_suite(full ? 200 : 40, seed));
  results.push_back(check_rho_suite(full ? 100 : 20, seed));
  results.push_back(full ? check_bound_suite(100, 100, seed)
                         : check_bound_suite(20, 10, seed));
  results.push_back(check_rademacher_suite(full ? 50 : 10, seed));
  if (log != nullptr) {
    for (const SuiteResult& r : results) {
      *log << (r.passed() ? "PASS " : "FAIL ") << r.name << ": " << r.cases
           << " cases, " << r.failures << " failures, worst " << r.worst
           << ", " << r.seconds << " s\n";
      for (const std::string& line : r.failing) *log << "  " << line << '\n';
    }
  }
  return results;
}

}  // namespace mild

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

#include "mild/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "mild/io.hpp"
#include "mild/losses.hpp"

namespace mild {
namespace {

constexpr int kMaxGridExperts = 4;
constexpr int kMaxGridPoints = 21;

void check_point(const CostSensitivePoint& point, const MarginVector& rhos) {
  if (point.probs.size() < 2)
    throw InvalidInput("bound check: need at least two experts");
  if (rhos.size() != point.probs.size())
    throw InvalidInput("bound check: one margin per expert");
  if ((point.probs.array() < 0.0).any() ||
      std::abs(point.probs.sum() - 1.0) > 1e-9)
    throw InvalidInput("bound check: probs must be a distribution");
  if (!(point.big_c >= 0.0 && point.big_c <= 1.0))
    throw InvalidInput("bound check: big_c must lie in [0, 1]");
}

void check_budget(int p, const ScoreGrid& grid) {
  const int n = grid.points();
  if (p > kMaxGridExperts || n > kMaxGridPoints) {
    std::ostringstream msg;
    msg << "grid budget exceeded: p=" << p << " (max " << kMaxGridExperts
        << "), grid points=" << n << " (max " << kMaxGridPoints
        << "), vectors=" << std::pow(static_cast<double>(n), p);
    throw BudgetExceeded(msg.str());
  }
  if (n < 2) throw InvalidInput("bound check: grid needs at least two points");
}

// Target and surrogate value at every grid score vector.
struct GridValues {
  std::vector<double> target;
  std::vector<double> surrogate;
  double target_inf = 0.0;
  double surrogate_inf = 0.0;
};

GridValues evaluate_grid(const CostSensitivePoint& point,
                         const MarginVector& rhos, const ScoreGrid& grid) {
  const std::vector<double> axis = grid.values();
  const auto p = static_cast<int>(point.probs.size());
  const int n = static_cast<int>(axis.size());
  std::vector<int> digit(static_cast<std::size_t>(p), 0);
  Vector scores(p);
  GridValues out;
  long long total = 1;
  for (int k = 0; k < p; ++k) total *= n;
  out.target.reserve(static_cast<std::size_t>(total));
  out.surrogate.reserve(static_cast<std::size_t>(total));
  for (long long v = 0; v < total; ++v) {
    for (int k = 0; k < p; ++k) scores(k) = axis[static_cast<std::size_t>(digit[static_cast<std::size_t>(k)])];
    // Deferral loss of the selected expert; on a grid exact ties are common
    // and the indicator sum would count every tied expert.
    out.target.push_back(point.big_c * (1.0 - point.probs(select_expert(scores))));
    out.surrogate.push_back(point.big_c *
                            mild_surrogate(scores, point.probs, rhos));
    for (int k = 0; k < p; ++k) {
      if (++digit[static_cast<std::size_t>(k)] < n) break;
      digit[static_cast<std::size_t>(k)] = 0;
    }
  }
  out.target_inf = *std::min_element(out.target.begin(), out.target.end());
  out.surrogate_inf =
      *std::min_element(out.surrogate.begin(), out.surrogate.end());
  return out;
}

double bound_rhs(double surrogate_excess) {
  return std::numbers::sqrt2 * std::sqrt(std::max(0.0, surrogate_excess));
}

double lipschitz_slack(const std::vector<CostSensitivePoint>& points,
                       const MarginVector& rhos, const ScoreGrid& grid) {
  double c_max = 0.0;
  for (const auto& pt : points) c_max = std::max(c_max, pt.big_c);
  return c_max * grid.step / rhos.rho.minCoeff();
}

}  // namespace

std::vector<double> ScoreGrid::values() const {
  if (!(step > 0.0) || !(hi >= lo))
    throw InvalidInput("score grid: need step > 0 and hi >= lo");
  std::vector<double> out;
  for (int i = 0;; ++i) {
    const double v = lo + i * step;
    if (v > hi + 1e-9 * step) break;
    out.push_back(v);
  }
  return out;
}

int DiscreteInstance::num_classes() const {
  return points.empty() ? 0 : static_cast<int>(points.front().label_dist.size());
}

int DiscreteInstance::num_experts() const {
  return points.empty() ? 0 : static_cast<int>(points.front().costs.cols());
}

void DiscreteInstance::validate() const {
  if (points.empty()) throw InvalidInput("instance: no points");
  const int c = num_classes();
  const int p = num_experts();
  double mass = 0.0;
  for (const auto& pt : points) {
    if (pt.label_dist.size() != c || pt.costs.rows() != c || pt.costs.cols() != p)
      throw InvalidInput("instance: inconsistent point shapes");
    if (pt.marginal < 0.0) throw InvalidInput("instance: negative marginal");
    if ((pt.label_dist.array() < 0.0).any() ||
        std::abs(pt.label_dist.sum() - 1.0) > 1e-9)
      throw InvalidInput("instance: label distribution does not sum to 1");
    if (pt.costs.minCoeff() < 0.0 || pt.costs.maxCoeff() > 1.0)
      throw InvalidInput("instance: cost outside [0, 1]");
    mass += pt.marginal;
  }
  if (std::abs(mass - 1.0) > 1e-9)
    throw InvalidInput("instance: marginals do not sum to 1");
}

DiscreteInstance instance_from_dataset(const Dataset& data,
                                       const CostTensor& costs) {
  if (data.size() == 0 || costs.size() != data.size())
    throw InvalidInput("instance_from_dataset: dimension mismatch");
  DiscreteInstance inst;
  const int c = data.num_classes;
  const double mass = 1.0 / data.size();
  inst.points.reserve(static_cast<std::size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i) {
    DiscretePoint pt;
    pt.marginal = mass;
    pt.label_dist = Vector::Zero(c);
    pt.label_dist(data.labels[static_cast<std::size_t>(i)] - 1) = 1.0;
    // Only the observed label carries mass; its cost row fills every label.
    pt.costs = costs.values.row(i).replicate(c, 1);
    inst.points.push_back(std::move(pt));
  }
  return inst;
}

std::string instance_to_csv(const DiscreteInstance& instance) {
  std::ostringstream out;
  out << "point,marginal,label,label_prob";
  for (int k = 0; k < instance.num_experts(); ++k) out << ",cost_" << (k + 1);
  out << '\n';
  for (std::size_t i = 0; i < instance.points.size(); ++i) {
    const auto& pt = instance.points[i];
    for (Eigen::Index y = 0; y < pt.label_dist.size(); ++y) {
      out << (i + 1) << ',' << format_exact(pt.marginal) << ',' << (y + 1) << ','
          << format_exact(pt.label_dist(y));
      for (Eigen::Index k = 0; k < pt.costs.cols(); ++k)
        out << ',' << format_exact(pt.costs(y, k));
      out << '\n';
    }
  }
  return out.str();
}

DiscreteInstance instance_from_csv(const std::string& text) {
  const CsvTable table = parse_csv(text);
  if (table.header.size() < 5 || table.header[0] != "point")
    throw InvalidInput("instance csv: unexpected header");
  const int p = static_cast<int>(table.header.size()) - 4;
  std::map<long long, std::vector<const std::vector<std::string>*>> by_point;
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size())
      throw InvalidInput("instance csv: row width does not match header");
    by_point[parse_integer(row[0])].push_back(&row);
  }
  DiscreteInstance inst;
  for (const auto& [id, rows] : by_point) {
    DiscretePoint pt;
    const auto c = static_cast<Eigen::Index>(rows.size());
    pt.marginal = parse_real((*rows.front())[1]);
    pt.label_dist = Vector::Zero(c);
    pt.costs = Matrix::Zero(c, p);
    for (const auto* row : rows) {
      const long long y = parse_integer((*row)[2]);
      if (y < 1 || y > c) throw InvalidInput("instance csv: label out of range");
      pt.label_dist(y - 1) = parse_real((*row)[3]);
      for (int k = 0; k < p; ++k)
        pt.costs(y - 1, k) = parse_real((*row)[static_cast<std::size_t>(4 + k)]);
    }
    inst.points.push_back(std::move(pt));
  }
  inst.validate();
  return inst;
}

BayesResult bayes_router(const DiscreteInstance& instance) {
  instance.validate();
  const int p = instance.num_experts();
  BayesResult out;
  out.ratios = Vector::Zero(p);
  for (const auto& pt : instance.points) {
    const Vector expected = pt.costs.transpose() * pt.label_dist;
    int best = 0;
    for (int k = 1; k < p; ++k)
      if (expected(k) <= expected(best)) best = k;
    out.choices.push_back(best);
    out.deferral_loss += pt.marginal * expected(best);
    out.ratios(best) += pt.marginal;
  }
  return out;
}

CostSensitiveInstance to_cost_sensitive(const DiscreteInstance& instance,
                                        RewardScheme scheme) {
  instance.validate();
  CostSensitiveInstance out;
  std::vector<ExpertDistribution> dists;
  double c_max = 0.0;
  for (const auto& pt : instance.points) {
    Matrix rewards(pt.costs.rows(), pt.costs.cols());
    for (Eigen::Index y = 0; y < pt.costs.rows(); ++y)
      rewards.row(y) =
          rewards_row(pt.costs.row(y).transpose(), scheme).transpose();
    dists.push_back(conditional_expert_dist(rewards, pt.label_dist));
    c_max = std::max(c_max, dists.back().big_c);
  }
  out.reward_scale = c_max > 1.0 ? 1.0 / c_max : 1.0;
  for (std::size_t i = 0; i < dists.size(); ++i) {
    CostSensitivePoint pt;
    pt.marginal = instance.points[i].marginal;
    pt.probs = dists[i].probs;
    pt.big_c = dists[i].big_c * out.reward_scale;
    out.points.push_back(std::move(pt));
  }
  return out;
}

double surrogate_infimum(const CostSensitivePoint& point,
                         const MarginVector& rhos) {
  check_point(point, rhos);
  if (point.big_c == 0.0) return 0.0;
  const auto p = point.probs.size();
  auto value = [&](const Vector& f) {
    return mild_surrogate(f, point.probs, rhos);
  };
  // Damped Newton; the objective is convex and flat along the all-ones
  // direction, which the rank-one term removes from the Hessian.
  Vector f = Vector::Zero(p);
  double current = value(f);
  const Matrix ones = Matrix::Constant(p, p, 1.0 / static_cast<double>(p));
  for (int iter = 0; iter < 200; ++iter) {
    const Vector grad = grad_mild(f, point.probs, rhos);
    if (grad.norm() < 1e-13) break;
    Matrix hess = ones;
    for (Eigen::Index k = 0; k < p; ++k) {
      if (point.probs(k) == 0.0) continue;
      Vector s = ((f.array() - f(k)) / rhos[static_cast<int>(k)]).exp().matrix();
      s /= s.sum();
      const double w = point.probs(k) / (rhos[static_cast<int>(k)] * rhos[static_cast<int>(k)]);
      hess += w * (Matrix(s.asDiagonal()) - s * s.transpose());
    }
    hess += 1e-12 * Matrix::Identity(p, p);
    Vector direction = -hess.ldlt().solve(grad);
    if (!direction.allFinite() || direction.dot(grad) >= 0.0) direction = -grad;
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      const Vector trial = f + t * direction;
      const double v = value(trial);
      if (v <= current + 1e-4 * t * grad.dot(direction)) {
        moved = v < current;
        f = trial;
        current = v;
        break;
      }
    }
    if (!moved) break;
  }
  return point.big_c * current;
}

BoundCheckReport check_consistency_bound(const CostSensitivePoint& point,
                                         const MarginVector& rhos,
                                         const ScoreGrid& grid) {
  return check_excess_error_bound({point}, rhos, grid);
}

BoundCheckReport check_excess_error_bound(
    const std::vector<CostSensitivePoint>& points, const MarginVector& rhos,
    const ScoreGrid& grid) {
  if (points.empty()) throw InvalidInput("bound check: no points");
  double mass = 0.0;
  for (const auto& pt : points) {
    check_point(pt, rhos);
    mass += pt.marginal;
  }
  if (std::abs(mass - 1.0) > 1e-9)
    throw InvalidInput("bound check: marginals must sum to 1");
  const int p = static_cast<int>(rhos.size());
  check_budget(p, grid);

  struct Pair {
    double target;     // marginal-weighted target excess
    double surrogate;  // marginal-weighted surrogate excess over the grid inf
    double strict;     // ... over the real-valued inf
  };
  std::vector<std::vector<Pair>> frontiers;
  BoundCheckReport report;
  report.routers = 1;
  for (const auto& pt : points) {
    const GridValues gv = evaluate_grid(pt, rhos, grid);
    const double exact_inf = surrogate_infimum(pt, rhos);
    // Keep the smallest surrogate value per distinct target value, then drop
    // pairs dominated by a larger target with a smaller surrogate.
    std::map<double, double> best;
    for (std::size_t v = 0; v < gv.target.size(); ++v) {
      auto [it, inserted] = best.emplace(gv.target[v], gv.surrogate[v]);
      if (!inserted) it->second = std::min(it->second, gv.surrogate[v]);
    }
    std::vector<Pair> frontier;
    double floor_value = std::numeric_limits<double>::infinity();
    for (auto it = best.rbegin(); it != best.rend(); ++it) {
      if (it->second >= floor_value) continue;
      floor_value = it->second;
      frontier.push_back({pt.marginal * (it->first - gv.target_inf),
                          pt.marginal * (it->second - gv.surrogate_inf),
                          pt.marginal * (it->second - exact_inf)});
    }
    frontiers.push_back(std::move(frontier));
    const double count = static_cast<double>(gv.target.size());
    report.routers = static_cast<double>(report.routers) * count > 9e18
                         ? std::numeric_limits<long long>::max()
                         : report.routers * static_cast<long long>(count);
  }

  report.slack = 2.0 * grid.step;
  report.lipschitz_slack = lipschitz_slack(points, rhos, grid);
  report.max_gap = -std::numeric_limits<double>::infinity();
  report.strict_max_gap = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> pick(frontiers.size(), 0);
  while (true) {
    double lhs = 0.0, excess = 0.0, strict_excess = 0.0;
    for (std::size_t i = 0; i < frontiers.size(); ++i) {
      const Pair& pr = frontiers[i][pick[i]];
      lhs += pr.target;
      excess += pr.surrogate;
      strict_excess += pr.strict;
    }
    const double rhs = bound_rhs(excess);
    const double gap = lhs - rhs;
    if (gap > report.slack + 1e-12) ++report.violations;
    if (gap > report.max_gap) {
      report.max_gap = gap;
      report.worst_lhs = lhs;
      report.worst_rhs = rhs;
    }
    report.strict_max_gap =
        std::max(report.strict_max_gap, lhs - bound_rhs(strict_excess));
    std::size_t i = 0;
    for (; i < frontiers.size(); ++i) {
      if (++pick[i] < frontiers[i].size()) break;
      pick[i] = 0;
    }
    if (i == frontiers.size()) break;
  }
  report.holds = report.violations == 0;
  report.holds_strict = report.strict_max_gap <= 1e-9;
  return report;
}

std::vector<double> rademacher_trials(const Matrix& mapped_features,
                                      const std::vector<int>& groups,
                                      const MarginVector& rhos,
                                      double hypothesis_norm, int trials,
                                      std::uint64_t seed) {
  const auto m = mapped_features.rows();
  if (m == 0 || static_cast<Eigen::Index>(groups.size()) != m)
    throw InvalidInput("rademacher: one group per sample");
  if (hypothesis_norm < 0.0) throw InvalidInput("rademacher: F must be >= 0");
  if (trials < 1) throw InvalidInput("rademacher: need at least one trial");
  const int p = rhos.size();
  Matrix scaled = mapped_features;
  for (Eigen::Index i = 0; i < m; ++i) {
    const int g = groups[static_cast<std::size_t>(i)];
    if (g < 0 || g >= p) throw InvalidInput("rademacher: group out of range");
    scaled.row(i) /= rhos[g];
  }
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  Matrix signs(p, m);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    for (Eigen::Index i = 0; i < m; ++i)
      for (int k = 0; k < p; ++k) signs(k, i) = coin(rng) ? 1.0 : -1.0;
    out.push_back(hypothesis_norm * (signs * scaled).norm() /
                  static_cast<double>(m));
  }
  return out;
}

RademacherEstimate mc_class_sensitive_rademacher(
    const Matrix& mapped_features, const std::vector<int>& groups,
    const MarginVector& rhos, double hypothesis_norm, int trials,
    std::uint64_t seed) {
  if (trials < 100) throw InvalidInput("rademacher: need at least 100 trials");
  const std::vector<double> values = rademacher_trials(
      mapped_features, groups, rhos, hypothesis_norm, trials, seed);
  RademacherEstimate est;
  est.trials = trials;
  double sum = 0.0, sq = 0.0;
  for (double v : values) {
    sum += v;
    sq += v * v;
  }
  est.estimate = sum / trials;
  const double var = std::max(0.0, (sq - trials * est.estimate * est.estimate) /
                                       (trials - 1));
  est.std_error = std::sqrt(var / trials);

  const int p = rhos.size();
  Vector counts = Vector::Zero(p), norms = Vector::Zero(p);
  const Vector row_norms = mapped_features.rowwise().norm();
  for (std::size_t i = 0; i < groups.size(); ++i) {
    counts(groups[i]) += 1.0;
    norms(groups[i]) = std::max(norms(groups[i]), row_norms(static_cast<Eigen::Index>(i)));
  }
  const double m = static_cast<double>(mapped_features.rows());
  const double lead = std::sqrt(static_cast<double>(p)) * hypothesis_norm / m;
  const Vector inv_rho2 = rhos.rho.array().square().inverse().matrix();
  est.analytic_bound = lead * std::sqrt((counts.array() * norms.array().square() *
                                         inv_rho2.array())
                                            .sum());
  est.coarse_bound = lead * norms.maxCoeff() *
                     std::sqrt((counts.array() * inv_rho2.array()).sum());
  return est;
}

TransferResult expectation_transfer_check(const DiscreteInstance& instance,
                                          const Matrix& scores,
                                          RewardScheme scheme) {
  instance.validate();
  if (scores.rows() != static_cast<Eigen::Index>(instance.points.size()) ||
      scores.cols() != instance.num_experts())
    throw InvalidInput("expectation transfer: one score row per point");
  TransferResult out;
  for (std::size_t i = 0; i < instance.points.size(); ++i) {
    const auto& pt = instance.points[i];
    const Vector f = scores.row(static_cast<Eigen::Index>(i)).transpose();
    const int chosen = select_expert(f);
    Matrix rewards(pt.costs.rows(), pt.costs.cols());
    double risk = 0.0, constant = 0.0;
    for (Eigen::Index y = 0; y < pt.costs.rows(); ++y) {
      const Vector c = pt.costs.row(y).transpose();
      rewards.row(y) = rewards_row(c, scheme).transpose();
      risk += pt.label_dist(y) * c(chosen);
      constant += pt.label_dist(y) * reformulation_constant(c, scheme);
    }
    const ExpertDistribution dist = conditional_expert_dist(rewards, pt.label_dist);
    double wrong = 0.0;
    for (int k = 0; k < f.size(); ++k)
      if (margin(f, k) <= 0.0) wrong += dist.probs(k);
    out.deferral_risk += pt.marginal * risk;
    out.input_expert_risk += pt.marginal * dist.big_c * wrong;
    out.constant += pt.marginal * constant;
  }
  out.residual =
      std::abs(out.deferral_risk - out.input_expert_risk - out.constant);
  return out;
}

}  // namespace mild

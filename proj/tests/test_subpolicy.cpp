// Copyright 2026 The crelay Authors
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

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "crelay/subpolicy.hpp"

namespace crelay {
namespace {

constexpr double kE = std::numbers::e;

// The first-order condition written out directly, no series tricks.
double naive_foc(double g, double p, double pbar) {
  return g / ((1.0 + p * g) * std::log(1.0 + p * g) + (pbar - p) * g);
}

// Root of the FOC by scanning a dense log grid for the sign change.
double grid_scan_root(double g, double pbar, double lambda) {
  const int n = 200000;
  double prev_p = 1e-12;
  double prev = naive_foc(g, prev_p, pbar) - lambda;
  for (int k = 1; k <= n; ++k) {
    const double p = 1e-12 * std::pow(1e20, static_cast<double>(k) / n);
    const double cur = naive_foc(g, p, pbar) - lambda;
    if ((prev > 0.0) != (cur > 0.0)) return std::sqrt(prev_p * p);
    prev_p = p;
    prev = cur;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

TEST(PerHopTest, TimeAndCost) {
  EXPECT_DOUBLE_EQ(per_hop_time(1.0, kE - 1.0), 1.0);
  EXPECT_DOUBLE_EQ(per_hop_time(2.0, (kE - 1.0) / 2.0), 1.0);
  EXPECT_EQ(per_hop_time(5, 5, 1.0, 1.0), 0.0);
  EXPECT_EQ(per_hop_cost(5, 5, 1.0, 1.0), 0.0);
  EXPECT_NEAR(per_hop_cost((kE - 1.0) / 2.0, 2.0), 2.0, 1e-15);
  EXPECT_THROW(per_hop_time(0.0, 1.0), std::domain_error);
  EXPECT_THROW(per_hop_time(1.0, -1.0), std::domain_error);
  EXPECT_THROW(per_hop_cost(1.0, 0.0), std::domain_error);
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    const double g = std::exp(10.0 * uniform01(rng) - 5.0);
    const double p = std::exp(10.0 * uniform01(rng) - 5.0);
    EXPECT_NEAR(per_hop_cost(g, p) / per_hop_time(g, p), p, 1e-12 * p);
  }
}

TEST(PerHopTest, TimeDivergesAsSnrVanishes) {
  double prev = 0.0;
  for (double x = 1.0; x > 1e-12; x /= 10.0) {
    const double t = per_hop_time(1.0, x);
    EXPECT_GT(t, prev);
    prev = t;
  }
  EXPECT_GT(prev, 1e11);
}

TEST(PerHopTest, GValue) {
  EXPECT_DOUBLE_EQ(g_value(0.7, 1.3, 0.0, 2.0), per_hop_time(0.7, 1.3));
  EXPECT_DOUBLE_EQ(g_value(0.7, 2.0, 0.4, 2.0), per_hop_time(0.7, 2.0));
  EXPECT_NEAR(g_value(1.0, kE - 1.0, 1.0, kE - 1.0), 1.0, 1e-15);
  EXPECT_THROW(g_value(1.0, 1.0, -0.1, 1.0), std::domain_error);
}

TEST(OptimalPowerTest, TrivialRootIsPbar) {
  Rng rng(2);
  for (int k = 0; k < 1000; ++k) {
    const double g = std::exp(8.0 * uniform01(rng) - 4.0);
    const double pbar = std::exp(8.0 * uniform01(rng) - 4.0);
    const double lambda = g / ((1.0 + pbar * g) * std::log1p(pbar * g));
    const double p = solve_optimal_power(g, pbar, lambda, {0.0, 1e300});
    EXPECT_NEAR(p, pbar, 1e-9 * std::max(1.0, pbar));
  }
}

TEST(OptimalPowerTest, LimitsAtTheEnds) {
  const PowerLimits lim{1e-6, 100.0};
  EXPECT_EQ(solve_optimal_power(2.0, 1.0, 0.0, lim), 100.0);
  EXPECT_EQ(solve_optimal_power(2.0, 1.0, 1.0, lim), 1e-6);
  EXPECT_EQ(solve_optimal_power(2.0, 1.0, 3.0, lim), 1e-6);
  // A tiny multiplier pushes the root past the cap.
  EXPECT_EQ(solve_optimal_power(2.0, 1.0, 1e-9, lim), 100.0);
  EXPECT_THROW(solve_optimal_power(2.0, 1.0, NAN, lim), std::domain_error);
  EXPECT_THROW(solve_optimal_power(INFINITY, 1.0, 0.5, lim), std::domain_error);
  EXPECT_THROW(solve_optimal_power(0.0, 1.0, 0.5, lim), std::domain_error);
}

TEST(OptimalPowerTest, ResidualAndGridScanAgree) {
  Rng rng(3);
  for (int k = 0; k < 1000; ++k) {
    const double g = std::exp(12.0 * uniform01(rng) - 6.0);
    const double pbar = std::exp(8.0 * uniform01(rng) - 4.0);
    const double lambda = (0.001 + 0.998 * uniform01(rng)) / pbar;
    const double p = solve_optimal_power(g, pbar, lambda, {0.0, INFINITY});
    EXPECT_LE(std::abs(naive_foc(g, p, pbar) - lambda), 1e-9)
        << "g=" << g << " pbar=" << pbar << " lambda=" << lambda;
    if (k % 20 == 0) {
      const double scan = grid_scan_root(g, pbar, lambda);
      EXPECT_NEAR(p, scan, 3e-4 * scan);
    }
  }
  const double p = solve_optimal_power(1.0, 1.0, 0.5, {0.0, INFINITY});
  EXPECT_LE(std::abs(naive_foc(1.0, p, 1.0) - 0.5), 1e-9);
  EXPECT_NEAR(p, grid_scan_root(1.0, 1.0, 0.5), 3e-4 * p);
}

TEST(OptimalPowerTest, FocStrictlyDecreasing) {
  Rng rng(4);
  for (int k = 0; k < 50; ++k) {
    const double g = std::exp(8.0 * uniform01(rng) - 4.0);
    const double pbar = std::exp(6.0 * uniform01(rng) - 3.0);
    EXPECT_NEAR(power_foc(g, 0.0, pbar), 1.0 / pbar, 1e-12 / pbar);
    double prev = power_foc(g, 0.0, pbar);
    for (double p = 1e-6; p < 1e4; p *= 1.05) {
      const double cur = power_foc(g, p, pbar);
      EXPECT_LT(cur, prev);
      prev = cur;
    }
  }
}

TEST(OptimalPowerTest, MinimizesG) {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    const double g = std::exp(6.0 * uniform01(rng) - 3.0);
    const double pbar = std::exp(4.0 * uniform01(rng) - 2.0);
    const double lambda = uniform01(rng) / pbar;
    const double p = solve_optimal_power(g, pbar, lambda, {0.0, INFINITY});
    const double best = g_value(g, p, lambda, pbar);
    for (double f : {0.9, 0.99, 1.01, 1.1}) {
      EXPECT_LE(best, g_value(g, p * f, lambda, pbar) * (1.0 + 1e-14));
    }
  }
}

SegmentProblem problem_on(const Topology& t, Segment seg, double pbar, std::size_t samples = 2000,
                          std::uint64_t seed = 17) {
  SolverOptions opt;
  opt.mc_samples = samples;
  return SegmentProblem::make(t, seg, pbar, opt, seed);
}

TEST(SegmentProblemTest, Validation) {
  const Topology t = Topology::evenly_spaced(4, 3.0, 2.0);
  EXPECT_THROW(problem_on(t, {2, 2}, 1.0), std::invalid_argument);
  EXPECT_THROW(problem_on(t, {1, 4}, 1.0), std::invalid_argument);
  EXPECT_THROW(problem_on(t, {0, 2}, 0.0), std::domain_error);
  const auto p = problem_on(t, {1, 3}, 2.0);
  EXPECT_EQ(p.hops(), 2u);
  EXPECT_DOUBLE_EQ(p.mean_gain(1, 3), t.pathloss(1, 3));
  EXPECT_DOUBLE_EQ(p.limits.cap, 200.0);
  EXPECT_EQ(p.hash(), problem_on(t, {1, 3}, 2.0).hash());
  EXPECT_NE(p.hash(), problem_on(t, {1, 3}, 2.5).hash());
}

TEST(RecursionTest, EndValueIsZero) {
  const Topology t = Topology::random_interior(6, 5.0, 2.0, 8);
  const auto p = problem_on(t, {1, 5}, 10.0, 300);
  Rng rng(6);
  const auto table = offline_recursion(p, 0.05, rng);
  EXPECT_EQ(table(5), 0.0);
  for (std::size_t s = 1; s < 5; ++s) {
    EXPECT_GT(table(s), 0.0);
    EXPECT_TRUE(std::isfinite(table(s)));
    EXPECT_GE(table(s), table(s + 1));
  }
}

TEST(RecursionTest, SingleDeterministicHop) {
  const Topology t({0.0, 1.5}, 2.0);
  const auto p = problem_on(t, {0, 1}, 3.0);
  const double lambda = 0.1;
  const auto table = offline_recursion(p, lambda, RecursionSamples::constant(1));
  const double g = t.pathloss(0, 1);
  const double pstar = solve_optimal_power(g, 3.0, lambda, p.limits);
  EXPECT_EQ(table(0), g_value(g, pstar, lambda, 3.0));
}

TEST(RecursionTest, TwoDeterministicHopsMatchGridSearch) {
  const Topology t({0.0, 0.8, 2.0}, 3.0);
  const double pbar = 4.0, lambda = 0.08;
  const auto p = problem_on(t, {0, 2}, pbar);
  const auto table = offline_recursion(p, lambda, RecursionSamples::constant(2));
  auto best_g = [&](double g) {
    double best = INFINITY;
    for (double q = 1e-3; q <= p.limits.cap; q *= 1.0005) {
      best = std::min(best, (1.0 + lambda * (q - pbar)) / std::log1p(g * q));
    }
    return best;
  };
  const double via_relay = best_g(t.pathloss(0, 1)) + best_g(t.pathloss(1, 2));
  const double direct = best_g(t.pathloss(0, 2));
  EXPECT_NEAR(table(0), std::min(via_relay, direct), 1e-6 * table(0));
  EXPECT_NEAR(table(1), best_g(t.pathloss(1, 2)), 1e-6 * table(1));
}

TEST(OnlineStepTest, SingleCandidateAndContract) {
  const Topology t = Topology::evenly_spaced(4, 3.0, 2.0);
  const auto policy = calibrate_lambda(problem_on(t, {0, 3}, 5.0, 200));
  const std::vector<double> one{0.3};
  EXPECT_EQ(online_step(2, one, policy).next, 3u);
  EXPECT_THROW(online_step(3, one, policy), std::logic_error);
  EXPECT_THROW(online_step(1, one, policy), std::logic_error);
}

TEST(OnlineStepTest, DominanceAndTieBreak) {
  ValueTable table{0, {0.0, 0.0, 0.0}};
  table.values = {9.0, 5.0, 0.0};
  const ContinuousPower rule{{1e-6, 100.0}};
  const std::vector<double> gains{1.0, 1.0};
  // Equal gains, J(1) = 5 >> J(2) = 0: skip the relay.
  EXPECT_EQ(decide(0, gains, table, 0.1, 1.0, rule).next, 2u);
  table.values = {9.0, 0.0, 0.0};
  EXPECT_EQ(decide(0, gains, table, 0.1, 1.0, rule).next, 1u);
}

TEST(OnlineStepTest, ArgminMatchesEnumeration) {
  const Topology t = Topology::random_interior(5, 4.0, 2.5, 31);
  const auto policy = calibrate_lambda(problem_on(t, {0, 4}, 8.0, 400, 77));
  Rng rng(314);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> gains;
    for (std::size_t m = 1; m <= 4; ++m) gains.push_back(unit_exponential(rng) * t.pathloss(0, m));
    const auto d = online_step(0, gains, policy);
    std::size_t best_m = 0;
    double best = INFINITY;
    for (std::size_t m = 1; m <= 4; ++m) {
      const double pw = solve_optimal_power(gains[m - 1], 8.0, policy.lambda, policy.problem.limits);
      const double v = g_value(gains[m - 1], pw, policy.lambda, 8.0) + policy.table(m);
      if (v < best) {
        best = v;
        best_m = m;
      }
    }
    EXPECT_EQ(d.next, best_m);
    EXPECT_EQ(d.evaluations, 4u);
    EXPECT_DOUBLE_EQ(d.power, solve_optimal_power(gains[best_m - 1], 8.0, policy.lambda,
                                                  policy.problem.limits));
  }
}

TEST(CalibrationTest, BudgetSlackGivesZeroMultiplier) {
  const Topology t = Topology::evenly_spaced(3, 2.0, 2.0);
  SolverOptions opt;
  opt.mc_samples = 200;
  opt.cap_ratio = 1.0;  // p_max == pbar: full power already fits the budget
  const auto p = SegmentProblem::make(t, {0, 2}, 3.0, opt, 5);
  const auto policy = calibrate_lambda(p, opt);
  EXPECT_EQ(policy.lambda, 0.0);
  EXPECT_TRUE(policy.report.budget_slack);
  EXPECT_LE(policy.report.achieved_power(), 3.0 * (1.0 + 1e-12));
}

TEST(CalibrationTest, MeetsBudgetOnFourHopSegment) {
  const Topology t = Topology::random_interior(6, 5.0, 2.0, 2024);
  for (double pbar : {0.5, 10.0, 1000.0}) {
    for (PowerMetric metric : {PowerMetric::episode_ratio, PowerMetric::ratio_of_means}) {
      SolverOptions opt;
      opt.power_metric = metric;
      const auto p = SegmentProblem::make(t, {1, 5}, pbar, opt, 99);
      const auto policy = calibrate_lambda(p, opt);
      EXPECT_GT(policy.lambda, 0.0);
      EXPECT_LT(policy.lambda, 1.0 / pbar);
      EXPECT_NEAR(policy.report.achieved_power(), pbar, 0.01 * pbar)
          << "pbar=" << pbar << " metric=" << to_string(metric);
    }
  }
}

TEST(CalibrationTest, MultiplierNonIncreasingInBudget) {
  const Topology t = Topology::random_interior(6, 5.0, 3.0, 5);
  double prev_lambda = INFINITY;
  double prev_rate = 0.0;
  for (double pbar = 0.25; pbar <= 4000.0; pbar *= 2.0) {
    const auto policy = calibrate_lambda(problem_on(t, {0, 5}, pbar, 1000, 123));
    EXPECT_LE(policy.lambda, prev_lambda) << "pbar=" << pbar;
    EXPECT_GE(policy.report.rate, prev_rate) << "pbar=" << pbar;
    prev_lambda = policy.lambda;
    prev_rate = policy.report.rate;
  }
}

TEST(CalibrationTest, Deterministic) {
  const Topology t = Topology::random_interior(5, 4.0, 2.0, 3);
  const auto a = calibrate_lambda(problem_on(t, {0, 4}, 20.0, 300, 4));
  const auto b = calibrate_lambda(problem_on(t, {0, 4}, 20.0, 300, 4));
  EXPECT_EQ(a.lambda, b.lambda);
  EXPECT_EQ(a.table.values, b.table.values);
}

TEST(EpisodeTest, ForwardProgressAndDeterminism) {
  const Topology t = Topology::random_interior(6, 5.0, 2.0, 12);
  const auto policy = calibrate_lambda(problem_on(t, {0, 5}, 30.0, 400));
  Rng a(1), b(1);
  for (int k = 0; k < 500; ++k) {
    const auto ra = run_segment_episode(policy, a);
    const auto rb = run_segment_episode(policy, b);
    EXPECT_EQ(ra.hops, rb.hops);
    EXPECT_EQ(ra.times, rb.times);
    ASSERT_EQ(ra.hops.front(), 0u);
    ASSERT_EQ(ra.hops.back(), 5u);
    ASSERT_LE(ra.times.size(), 5u);
    for (std::size_t h = 1; h < ra.hops.size(); ++h) ASSERT_GT(ra.hops[h], ra.hops[h - 1]);
    for (std::size_t f = 0; f < ra.evaluations.size(); ++f) {
      ASSERT_LE(ra.evaluations[f], 5u);
    }
  }
}

TEST(EpisodeTest, DeterministicGainsUnrollTheTable) {
  const Topology t({0.0, 0.6, 1.7, 2.1, 3.0}, 2.0);
  const double pbar = 2.0, lambda = 0.2;
  const auto p = problem_on(t, {0, 4}, pbar);
  const CalibratedPolicy policy{p, lambda, offline_recursion(p, lambda, RecursionSamples::constant(4)),
                                {}};
  const auto rec = run_segment_episode(policy, EpisodeChannel::constant(4));
  double time = 0.0, lagrangian = 0.0;
  for (std::size_t h = 0; h + 1 < rec.hops.size(); ++h) {
    const double g = t.pathloss(rec.hops[h], rec.hops[h + 1]);
    const double pw = solve_optimal_power(g, pbar, lambda, p.limits);
    time += per_hop_time(g, pw);
    lagrangian += g_value(g, pw, lambda, pbar);
  }
  EXPECT_NEAR(rec.total_time, time, 1e-12 * time);
  // With deterministic gains the table value is the realized Lagrangian cost.
  EXPECT_NEAR(policy.table(0), lagrangian, 1e-12 * lagrangian);
}

TEST(MetricsTest, DeterministicSingleHop) {
  const Topology t({0.0, 1.0}, 2.0);
  const double pbar = 3.0;
  const auto p = problem_on(t, {0, 1}, pbar);
  const CalibratedPolicy policy{p, 0.0, offline_recursion(p, 0.0, RecursionSamples::constant(1)), {}};
  EpisodeAccumulator acc;
  const auto rec = run_segment_episode(policy, EpisodeChannel::constant(1));
  acc.add(rec.total_time, rec.total_energy);
  const auto m = SegmentMetrics::from(acc);
  EXPECT_NEAR(m.rate, std::log1p(p.limits.cap), 1e-12);
  EXPECT_NEAR(m.power_ratio_of_means, p.limits.cap, 1e-9);
  EXPECT_NEAR(m.power_episode_ratio, p.limits.cap, 1e-9);
}

TEST(MetricsTest, StandardErrorShrinksAsRootN) {
  const Topology t = Topology::random_interior(4, 3.0, 2.0, 6);
  const auto policy = calibrate_lambda(problem_on(t, {0, 3}, 10.0, 500));
  std::vector<double> se;
  for (std::size_t n : {100u, 1000u, 10000u}) {
    Rng rng(derive_seed(8, {n}));
    se.push_back(estimate_segment_metrics(policy, n, rng).rate_se);
  }
  EXPECT_NEAR(se[0] / se[1], std::sqrt(10.0), 0.35 * std::sqrt(10.0));
  EXPECT_NEAR(se[1] / se[2], std::sqrt(10.0), 0.35 * std::sqrt(10.0));
}

TEST(MetricsTest, RateNonDecreasingInBudget) {
  const Topology t = Topology::random_interior(6, 5.0, 2.0, 1);
  double prev = 0.0;
  for (double pbar = 1.0; pbar <= 10000.0; pbar *= 4.0) {
    const auto policy = calibrate_lambda(problem_on(t, {0, 5}, pbar, 1000, 55));
    Rng rng(2718);
    const auto m = estimate_segment_metrics(policy, 20000, rng);
    EXPECT_GE(m.rate + 3.0 * m.rate_se, prev) << "pbar=" << pbar;
    prev = m.rate;
  }
}

}  // namespace
}  // namespace crelay

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

#include <gtest/gtest.h>

#include "crelay/master.hpp"

namespace crelay {
namespace {

ProbabilityTable random_table(std::size_t nodes, Rng& rng) {
  ProbabilityTable pr(nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    for (std::size_t j = i; j < nodes; ++j) pr.set(i, j, uniform01(rng));
  }
  return pr;
}

PairTable<double> random_rates(std::size_t nodes, Rng& rng) {
  PairTable<double> u(nodes, 0.0);
  for (std::size_t i = 0; i < nodes; ++i) {
    for (std::size_t j = i + 1; j < nodes; ++j) u(i, j) = 10.0 * uniform01(rng);
  }
  return u;
}

// U = ln(1 + c P) per pair, c = 1 / hops^3.
struct LogRateModel {
  RateSample evaluate(std::size_t i, std::size_t j, double p) const {
    const double c = 1.0 / std::pow(static_cast<double>(j - i), 3.0);
    RateSample s;
    s.rate = std::log1p(c * p);
    s.slope = c / (1.0 + c * p);
    s.power = p;
    return s;
  }
};

TEST(SectionRateTest, Examples) {
  ProbabilityTable pr(3);
  pr.set(0, 1, 0.2);
  pr.set(1, 2, 0.3);
  pr.set(0, 2, 0.5);
  PairTable<double> u(3, 0.0);
  u(0, 1) = 1.0;
  u(1, 2) = 2.0;
  u(0, 2) = 4.0;
  EXPECT_DOUBLE_EQ(section_rate(1, pr, u), 0.2 + 2.0);
  EXPECT_DOUBLE_EQ(section_rate(2, pr, u), 0.6 + 2.0);
  EXPECT_THROW(section_rate(0, pr, u), std::domain_error);
  EXPECT_THROW(section_rate(3, pr, u), std::domain_error);
  EXPECT_EQ(section_rates(pr, u).size(), 2u);
}

TEST(FlowBalanceTest, IdentityHoldsOnRandomInstances) {
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    const std::size_t nodes = 3 + static_cast<std::size_t>(uniform01(rng) * 7);  // M in 2..8
    const auto pr = random_table(nodes, rng);
    const auto u = random_rates(nodes, rng);
    for (std::size_t m = 1; m + 1 < nodes; ++m) {
      EXPECT_LE(std::abs(flow_balance_identity(m, pr, u)), 1e-12);
    }
  }
}

TEST(FlowBalanceTest, SignFlipIsDetected) {
  Rng rng(2);
  const auto pr = random_table(5, rng);
  const auto u = random_rates(5, rng);
  EXPECT_GT(std::abs(flow_balance_identity(2, pr, u, -1.0)), 1e-6);
  EXPECT_THROW(flow_balance_identity(4, pr, u), std::domain_error);
}

TEST(MasterProblemTest, CutoffAndBudget) {
  const auto pr = ProbabilityTable::from_model(PuActivityModel::iid(0.85), Topology::evenly_spaced(6, 5, 2));
  const auto all = MasterProblem::make(pr, 1.0);
  EXPECT_EQ(all.pairs.size(), 15u);
  EXPECT_TRUE(MasterProblem::make(pr, 1.0, 1.0).pairs.empty());
  EXPECT_THROW(MasterProblem::make(pr, 0.0), std::invalid_argument);
  EXPECT_NEAR(all.budget_used(std::vector<double>(15, 2.0)), 2.0 * all.weight_sum(), 1e-12);
}

TEST(ProjectionTest, FeasibleAndIdempotent) {
  const auto pr = ProbabilityTable::from_model(PuActivityModel::iid(0.7), Topology::evenly_spaced(5, 4, 3));
  const auto mp = MasterProblem::make(pr, 2.0);
  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> y(mp.pairs.size());
    for (double& v : y) v = 40.0 * uniform01(rng) - 10.0;
    const auto x = project(mp, y).pbar;
    EXPECT_LE(mp.budget_used(x), mp.p0 * (1.0 + 1e-12));
    for (double v : x) EXPECT_GE(v, mp.floor);
    const auto again = project(mp, x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(again.pbar[i], x[i], 1e-9 * (1.0 + x[i]));
  }
  // Points inside the set stay put.
  const std::vector<double> inside(mp.pairs.size(), 0.5 * mp.p0 / mp.weight_sum());
  EXPECT_EQ(project(mp, inside).pbar, inside);
  EXPECT_EQ(project(mp, inside).nu, 0.0);
}

TEST(SubgradientTest, SplitsAcrossTiedSections) {
  ProbabilityTable pr(3);
  pr.set(0, 1, 0.5);
  pr.set(1, 2, 0.5);
  const auto mp = MasterProblem::make(pr, 1.0);
  ASSERT_EQ(mp.pairs.size(), 2u);
  Evaluation ev;
  ev.samples = {{1.0, 0, 0, 2.0, 1.0}, {1.0, 0, 0, 4.0, 1.0}};
  ev.sections = {0.5, 0.5};
  const auto g = subgradient(mp, ev);
  EXPECT_DOUBLE_EQ(g[0], 0.5 * 0.5 * 2.0);
  EXPECT_DOUBLE_EQ(g[1], 0.5 * 0.5 * 4.0);
  ev.sections = {0.5, 0.9};
  const auto only_first = subgradient(mp, ev);
  EXPECT_DOUBLE_EQ(only_first[0], 0.5 * 2.0);
  EXPECT_EQ(only_first[1], 0.0);
}

TEST(SolveMasterTest, TwoSegmentToyMatchesGrid) {
  ProbabilityTable pr(3);
  pr.set(0, 1, 0.3);
  pr.set(1, 2, 0.6);
  const auto mp = MasterProblem::make(pr, 1.0);
  const LogRateModel model;
  const auto sol = solve_master(mp, model);
  EXPECT_LE(sol.budget_used, mp.p0 * (1.0 + 1e-9));
  double best = 0.0;
  for (int a = 1; a <= 50; ++a) {
    for (int b = 1; b <= 50; ++b) {
      const std::vector<double> x{a * mp.p0 / 50.0 / 0.3, b * mp.p0 / 50.0 / 0.6};
      if (mp.budget_used(x) > mp.p0 * (1.0 + 1e-12)) continue;
      best = std::max(best, objective(mp, x, model));
    }
  }
  EXPECT_GE(sol.throughput, 0.99 * best);
  for (std::size_t t = 1; t < sol.best_trace.size(); ++t) EXPECT_GE(sol.best_trace[t], sol.best_trace[t - 1]);
}

TEST(SolveMasterTest, BalancesSectionsOnAChain) {
  const auto pr = ProbabilityTable::from_model(PuActivityModel::iid(0.85), Topology::evenly_spaced(5, 4, 3));
  const auto mp = MasterProblem::make(pr, 4.0);
  const auto sol = solve_master(mp, LogRateModel{});
  const auto start = evaluate_allocation(
      mp, std::vector<double>(mp.pairs.size(), mp.p0 / mp.weight_sum()), LogRateModel{});
  EXPECT_GT(sol.throughput, start.objective);
  EXPECT_EQ(sol.sections.size(), 4u);
  EXPECT_DOUBLE_EQ(sol.throughput, *std::min_element(sol.sections.begin(), sol.sections.end()));
}

TEST(SolveMasterTest, NoPairsGivesZero) {
  const auto pr = ProbabilityTable::from_model(PuActivityModel::iid(0.85), Topology::evenly_spaced(4, 3, 3));
  const auto sol = solve_master(MasterProblem::make(pr, 1.0, 1.0), LogRateModel{});
  EXPECT_EQ(sol.throughput, 0.0);
  EXPECT_TRUE(sol.allocation.empty());
}

TEST(EvaluateAllocationTest, RejectsInfeasible) {
  const auto pr = ProbabilityTable::from_model(PuActivityModel::iid(0.85), Topology::evenly_spaced(4, 3, 3));
  const auto mp = MasterProblem::make(pr, 1.0);
  EXPECT_THROW(evaluate_allocation(mp, std::vector<double>(mp.pairs.size(), 100.0), LogRateModel{}),
               std::logic_error);
  EXPECT_THROW(evaluate_allocation(mp, std::vector<double>(1, 0.1), LogRateModel{}), std::logic_error);
}

TEST(CalibratedRateModelTest, CacheIsConsistentAndThreadSafe) {
  SolverOptions opts;
  opts.mc_samples = 300;
  const CalibratedRateModel model(Topology::evenly_spaced(4, 3, 3), opts, 5);
  const RateSample a = model.evaluate(0, 2, 1.0);
  const RateSample b = model.evaluate(0, 2, 1.0001);  // same cache cell
  EXPECT_EQ(a.rate, b.rate);
  EXPECT_EQ(model.evaluations(), 1u);
  const CalibratedRateModel fresh(Topology::evenly_spaced(4, 3, 3), opts, 5);
  fresh.prefetch({{{0, 2}, 1.0}, {{1, 3}, 2.0}, {{0, 3}, 0.5}}, 3);
  EXPECT_EQ(fresh.evaluate(0, 2, 1.0).rate, a.rate);
  EXPECT_EQ(fresh.evaluations(), 3u);
  EXPECT_DOUBLE_EQ(a.slope, a.lambda * a.rate);
  EXPECT_EQ(fresh.cached(0, 2).size(), 1u);
}

// Central differences of the lower-bound rate against lambda* U, with common
// random numbers (same pair seed at both ends).
TEST(GradientTest, FiniteDifferenceMatchesScaledMultiplier) {
  SolverOptions opts;
  opts.mc_samples = 2000;
  const CalibratedRateModel model(Topology::random_interior(6, 5.0, 3.0, 2024), opts, 7, 0.0);
  for (auto [i, j, pbar] : {std::tuple{0u, 2u, 30.0}, std::tuple{1u, 4u, 100.0}}) {
    const double h = 0.1 * pbar;
    const auto c = model.evaluate(i, j, pbar);
    const auto up = model.evaluate(i, j, pbar + h);
    const auto dn = model.evaluate(i, j, pbar - h);
    const double fd = (up.rate - dn.rate) / (2.0 * h);
    const double se = std::hypot(up.rate_se, dn.rate_se) / (2.0 * h);
    EXPECT_NEAR(fd, c.slope, std::max(3.0 * se, 0.05 * c.slope)) << i << "," << j;
  }
}

}  // namespace
}  // namespace crelay

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

#include "crelay/oracle.hpp"

namespace crelay {
namespace {

TinySegment chain_segment(std::size_t hops, std::vector<double> levels, double pbar,
                          DiscreteFading fading = DiscreteFading::rayleigh(2), double alpha = 3.0) {
  const Topology topo = Topology::evenly_spaced(hops + 1, static_cast<double>(hops), alpha);
  return TinySegment::make(topo, {0, hops}, std::move(fading), std::move(levels), pbar);
}

TEST(DiscreteFadingTest, RayleighCellsHaveUnitMean) {
  const auto two = DiscreteFading::rayleigh(2);
  EXPECT_NEAR(two.levels[0], 1.0 - std::log(2.0), 1e-15);
  EXPECT_NEAR(two.levels[1], 1.0 + std::log(2.0), 1e-15);
  for (std::size_t k = 1; k <= 3; ++k) {
    const auto f = DiscreteFading::rayleigh(k);
    double mean = 0.0;
    for (std::size_t r = 0; r < k; ++r) mean += f.levels[r] * f.probs[r];
    EXPECT_NEAR(mean, 1.0, 1e-14);
  }
  EXPECT_THROW(DiscreteFading::rayleigh(4), std::invalid_argument);
  EXPECT_THROW((DiscreteFading{{1.0, 2.0}, {0.5, 0.6}}.validate()), std::invalid_argument);
}

TEST(TinySegmentTest, Validation) {
  EXPECT_THROW(chain_segment(2, {}, 1.0), std::invalid_argument);
  EXPECT_THROW(chain_segment(2, {1, 2, 3, 4, 5, 6, 7, 8, 9}, 1.0), std::invalid_argument);
  EXPECT_THROW(chain_segment(2, {2.0, 1.0}, 1.0), std::invalid_argument);
  const auto seg = chain_segment(3, {1.0, 2.0}, 1.0);
  EXPECT_EQ(seg.combos(0), 8u);
  EXPECT_EQ(seg.combos(2), 2u);
  EXPECT_EQ(seg.actions(0), 6u);
  EXPECT_EQ(seg.actions(2), 2u);
}

TEST(PolicyEvaluationTest, ProbabilitiesSumToOne) {
  const auto seg = chain_segment(3, {0.5, 2.0}, 1.0, DiscreteFading::rayleigh(3));
  DiscretePolicy p = empty_policy(seg);
  p.action[0].assign(seg.combos(0), 3);  // to node 2 at the top level
  double total = 0.0;
  for (const Outcome& o : outcomes_from(seg, p, 0)) total += o.prob;
  EXPECT_NEAR(total, 1.0, 1e-14);
}

TEST(SubproblemOracleTest, SingleHopSingleGainTakesLargestFeasibleLevel) {
  const auto seg = chain_segment(1, {0.5, 1.0, 2.0}, 1.2, DiscreteFading::deterministic());
  for (const auto& r : {brute_force_subproblem_flat(seg), brute_force_subproblem_recursive(seg)}) {
    ASSERT_TRUE(r.feasible);
    EXPECT_DOUBLE_EQ(r.rate, std::log1p(seg.pathloss(0, 1) * 1.0));
    EXPECT_DOUBLE_EQ(r.power, 1.0);
  }
}

TEST(SubproblemOracleTest, InfeasibleBudgetGivesZero) {
  const auto seg = chain_segment(2, {1.0, 2.0}, 0.5);
  const auto r = brute_force_subproblem(seg);
  EXPECT_FALSE(r.feasible);
  EXPECT_EQ(r.rate, 0.0);
  EXPECT_TRUE(calibrate_discrete(seg).infeasible);
}

TEST(SubproblemOracleTest, FlatAndRecursiveAgree) {
  for (double pbar : {0.3, 0.9, 2.5, 4.0, 10.0}) {
    const auto seg = chain_segment(2, {0.25, 0.8, 2.0, 5.0}, pbar);
    const auto flat = brute_force_subproblem_flat(seg);
    const auto rec = brute_force_subproblem_recursive(seg);
    ASSERT_EQ(flat.feasible, rec.feasible) << pbar;
    EXPECT_NEAR(flat.rate, rec.rate, 1e-12 * flat.rate) << pbar;
    EXPECT_TRUE(seg.feasible(rec.power));
  }
  // Threads split the index range; the reduction is order independent.
  const auto seg = chain_segment(2, {0.25, 0.8, 2.0, 5.0}, 1.5);
  const auto one = brute_force_subproblem_flat(seg, 1);
  const auto four = brute_force_subproblem_flat(seg, 4);
  EXPECT_EQ(one.rate, four.rate);
  EXPECT_EQ(one.policy.action, four.policy.action);
}

TEST(SubproblemOracleTest, FlatAndRecursiveAgreeOnThreeHops) {
  const auto seg = chain_segment(3, {1.0}, 1.0);
  EXPECT_NEAR(brute_force_subproblem_flat(seg).rate, brute_force_subproblem_recursive(seg).rate, 1e-13);
}

TEST(SubproblemOracleTest, GuardRefusesLargeEnumerations) {
  EXPECT_THROW(brute_force_subproblem_flat(chain_segment(3, {1.0, 2.0}, 1.5)), EnumerationGuardError);
  EXPECT_THROW(brute_force_subproblem_recursive(chain_segment(4, {1.0, 2.0}, 1.5)), EnumerationGuardError);
  EXPECT_THROW(enumerate_lagrangian(chain_segment(4, {1.0, 2.0, 3.0}, 1.5), 0.1), EnumerationGuardError);
}

TEST(SubproblemOracleTest, RepeatedRunsAreIdentical) {
  const auto seg = chain_segment(3, {0.5, 2.0}, 1.0);
  const auto a = brute_force_subproblem(seg);
  const auto b = brute_force_subproblem(seg);
  EXPECT_EQ(a.rate, b.rate);
  EXPECT_EQ(a.policy.action, b.policy.action);
}

TEST(DiscreteRecursionTest, MatchesExhaustiveEnumerationExactly) {
  for (std::size_t hops = 1; hops <= 3; ++hops) {
    for (double lambda : {0.0, 0.05, 0.7, 3.0}) {
      const auto seg = chain_segment(hops, {0.2, 0.5, 1.0, 2.0, 5.0}, 1.0);
      const auto J = discrete_recursion(seg, lambda);
      EXPECT_EQ(J[0], enumerate_lagrangian(seg, lambda).value) << hops << " " << lambda;
    }
  }
}

TEST(DiscreteRecursionTest, GreedyPolicyReproducesTable) {
  const auto seg = chain_segment(3, {0.2, 1.0, 5.0}, 1.0, DiscreteFading::rayleigh(3));
  DiscretePolicy p;
  const auto J = discrete_recursion(seg, 0.4, &p);
  EXPECT_EQ(lagrangian_values(seg, p, 0.4), J);
}

TEST(DiscreteCalibrationTest, SlackAndBinding) {
  const auto slack = calibrate_discrete(chain_segment(2, {0.5, 1.0}, 3.0));
  EXPECT_TRUE(slack.budget_slack);
  EXPECT_EQ(slack.lambda, 0.0);
  const auto seg = chain_segment(3, {0.25, 1.0, 4.0}, 1.0);
  const auto c = calibrate_discrete(seg);
  EXPECT_FALSE(c.budget_slack);
  EXPECT_GT(c.lambda, 0.0);
  EXPECT_TRUE(seg.feasible(c.value.power_episode_ratio));
}

TEST(OracleDominanceTest, LowerBoundNeverBeatsOracle) {
  for (std::size_t hops = 1; hops <= 3; ++hops) {
    for (double pbar : {0.3, 1.0, 4.0, 20.0}) {
      const auto seg = chain_segment(hops, {pbar / 2.0, 1.5 * pbar}, pbar);
      const auto lb = calibrate_discrete(seg);
      const auto opt = brute_force_subproblem(seg);
      EXPECT_LE(lb.value.rate, opt.rate * (1.0 + 1e-12)) << hops << " " << pbar;
      EXPECT_GT(lb.value.rate, 0.0);
    }
  }
}

TEST(OriginalOracleTest, FullAvailabilityReducesToWholeSegment) {
  TinyInstance inst{Topology::evenly_spaced(4, 3.0, 3.0), DiscreteFading::rayleigh(2), {0.5, 2.0}, 1.0};
  const auto r = brute_force_original(inst, 1.5, 10);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0].head, 0u);
  EXPECT_EQ(r.pairs[0].end, 3u);
  EXPECT_EQ(r.objective, brute_force_subproblem(inst.segment(0, 3, 1.5)).rate);
}

TEST(OriginalOracleTest, SymmetricChainHasSymmetricOptimum) {
  TinyInstance inst{Topology::evenly_spaced(3, 2.0, 3.0), DiscreteFading::rayleigh(2),
                    {0.25, 0.5, 1.0, 2.0, 4.0}, 0.85};
  const double p0 = 1.0;
  const std::size_t grid = 12;
  const auto r = brute_force_original(inst, p0, grid);
  const auto pr = inst.probabilities();
  ASSERT_EQ(r.pairs.size(), 3u);
  // Best over allocations that give (0,1) and (1,2) the same share.
  double best = 0.0;
  for (std::size_t q = 0; 2 * q <= grid; ++q) {
    const double side = q * p0 / grid / pr(0, 1);
    const double whole = (grid - 2 * q) * p0 / grid / pr(0, 2);
    const double u_side = q ? brute_force_subproblem(inst.segment(0, 1, side)).rate : 0.0;
    const double u_whole = whole > 0 ? brute_force_subproblem(inst.segment(0, 2, whole)).rate : 0.0;
    best = std::max(best, pr(0, 1) * u_side + pr(0, 2) * u_whole);
  }
  EXPECT_NEAR(best, r.objective, 1e-14);
}

TEST(OriginalOracleTest, GuardRefusesFineGrids) {
  TinyInstance inst{Topology::evenly_spaced(4, 3.0, 3.0), DiscreteFading::rayleigh(2), {1.0}, 0.85};
  EXPECT_THROW(brute_force_original(inst, 1.0, 500), EnumerationGuardError);
  TinyInstance big{Topology::evenly_spaced(5, 4.0, 3.0), DiscreteFading::rayleigh(2), {1.0}, 0.85};
  EXPECT_THROW(big.validate(), std::invalid_argument);
}

TEST(ExchangeLemmaTest, SingleTermIsTrivial) {
  ExchangeInstance inst;
  inst.a = {{2.0}, {0.5}, {1.0}};
  inst.f = {{{0.3, -0.2, 0.9}}};
  const auto r = verify_exchange_lemma(inst);
  EXPECT_TRUE(r.equal);
  EXPECT_EQ(r.bound, 0.5 * 0.9);
}

TEST(ExchangeLemmaTest, RandomIndependentInstancesAreExact) {
  Rng rng(7);
  for (int k = 0; k < 200; ++k) {
    const auto r = verify_exchange_lemma(random_exchange_instance(rng));
    EXPECT_TRUE(r.equal) << k << ": " << r.v << " " << r.v_prime << " " << r.bound;
  }
}

TEST(ExchangeLemmaTest, CouplingBreaksTheExchange) {
  const auto control = verify_exchange_lemma(coupled_exchange_control());
  EXPECT_EQ(control.v, 0.0);
  EXPECT_EQ(control.v_prime, 1.0);
  EXPECT_FALSE(control.equal);
  Rng rng(8);
  int strict = 0;
  for (int k = 0; k < 200; ++k) {
    const auto r = verify_exchange_lemma(random_exchange_instance(rng, 4, 4, 4, 3));
    EXPECT_LE(r.v, r.v_prime);
    strict += r.v < r.v_prime;
  }
  EXPECT_GT(strict, 0);
}

TEST(SequenceLemmaTest, HandExamples) {
  EXPECT_TRUE(verify_sequence_lemma({{1.0}, {0.0}, {0.0}}).holds);
  const auto r = verify_sequence_lemma({{0.5, 0.5}, {-1.0, 1.0}, {1.0, -1.0}});
  EXPECT_EQ(r.value, -1.0);
  EXPECT_TRUE(r.holds);
  // Same-direction sequences violate it.
  EXPECT_FALSE(verify_sequence_lemma({{0.5, 0.5}, {-1.0, 1.0}, {-1.0, 1.0}}).holds);
}

TEST(SequenceLemmaTest, RandomCenteredSequences) {
  Rng rng(9);
  int violations = 0;
  for (int k = 0; k < 10000; ++k) violations += !verify_sequence_lemma(random_centered_sequences(rng)).holds;
  EXPECT_EQ(violations, 0);
}

TEST(CovarianceTest, VerdictRule) {
  EXPECT_EQ(covariance_verdict(0.0, 0.0), Verdict::consistent);
  EXPECT_EQ(covariance_verdict(-1.0, 0.1), Verdict::consistent);
  EXPECT_EQ(covariance_verdict(0.25, 0.1), Verdict::consistent);
  EXPECT_EQ(covariance_verdict(0.05, 0.1), Verdict::inconclusive);
  EXPECT_EQ(covariance_verdict(0.5, 0.6), Verdict::inconclusive);
  EXPECT_EQ(covariance_verdict(0.5, 0.1), Verdict::violated);
}

CalibratedPolicy chain_policy(double pbar) {
  const Topology topo = Topology::evenly_spaced(4, 3.0, 3.0);
  SolverOptions opts;
  opts.mc_samples = 4000;
  return calibrate_lambda(SegmentProblem::make(topo, {0, 3}, pbar, opts, 11), opts);
}

TEST(CovarianceTest, DeterministicGainsGiveZero) {
  const auto rep = verify_covariance_property(chain_policy(1.0), 2, 100, 1, true);
  for (double e : rep.estimates) EXPECT_EQ(e, 0.0);
  EXPECT_EQ(rep.overall, Verdict::consistent);
}

TEST(CovarianceTest, FadedChainIsNotViolated) {
  ASSERT_TRUE(Topology::evenly_spaced(4, 3.0, 3.0).monotone_gain());
  const auto rep = verify_covariance_property(chain_policy(1.0), 2, 100000, 3);
  ASSERT_EQ(rep.estimates.size(), 1u);
  EXPECT_LE(rep.estimates[0], 3.0 * rep.std_errors[0]);
  EXPECT_NE(rep.overall, Verdict::violated);
}

}  // namespace
}  // namespace crelay

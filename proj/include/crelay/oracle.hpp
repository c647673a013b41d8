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

/**
 * \file crelay/oracle.hpp
 *
 * \brief Brute-force references and algebraic property checks.
 *
 * Segments are discretized: the fading |H|^2 takes one of a few levels and
 * power one of a few grid values, so every expectation is an exact finite
 * sum. A deterministic causal policy maps (node, fading of that node's
 * downstream links) to (next hop, power level). Fading rows at different
 * nodes are independent, and each node is visited at most once.
 *
 * The same discretized instance is also solved by the Lagrangian recursion
 * (the lower-bound policy), so the two can be compared on equal terms.
 */

#ifndef CRELAY_ORACLE_HPP
#define CRELAY_ORACLE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "crelay/master.hpp"
#include "crelay/model.hpp"
#include "crelay/random.hpp"
#include "crelay/subpolicy.hpp"

namespace crelay {

/// Largest enumeration any oracle will attempt.
inline constexpr double kEnumerationGuard = 1e7;

class EnumerationGuardError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Relative slack on the power constraint when comparing exact sums that
/// were accumulated in different orders.
inline constexpr double kFeasibilitySlack = 1e-9;

// ---------------------------------------------------------------------------
// Discretized instances
// ---------------------------------------------------------------------------

struct DiscreteFading {
  std::vector<double> levels;
  std::vector<double> probs;

  void validate() const {
    if (levels.empty() || levels.size() > 3 || probs.size() != levels.size()) {
      throw std::invalid_argument("DiscreteFading: need 1 to 3 levels with matching probabilities");
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < levels.size(); ++k) {
      if (!(levels[k] > 0.0) || !(probs[k] > 0.0)) {
        throw std::invalid_argument("DiscreteFading: levels and probabilities must be positive");
      }
      sum += probs[k];
    }
    if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("DiscreteFading: probabilities must sum to 1");
  }

  static DiscreteFading deterministic(double value = 1.0) { return {{value}, {1.0}}; }

  /// Unit-mean Rayleigh power quantized into `k` equiprobable cells, each
  /// represented by its conditional mean.
  static DiscreteFading rayleigh(std::size_t k) {
    if (k < 1 || k > 3) throw std::invalid_argument("DiscreteFading: 1 to 3 levels");
    DiscreteFading f;
    // Partial mean of Exp(1) above x: (x + 1) e^-x.
    auto tail_mean = [](double x) { return std::isinf(x) ? 0.0 : (x + 1.0) * std::exp(-x); };
    for (std::size_t r = 0; r < k; ++r) {
      const double a = -std::log1p(-static_cast<double>(r) / static_cast<double>(k));
      const double b = r + 1 == k ? std::numeric_limits<double>::infinity()
                                  : -std::log1p(-static_cast<double>(r + 1) / static_cast<double>(k));
      const double p = 1.0 / static_cast<double>(k);
      f.levels.push_back((tail_mean(a) - tail_mean(b)) / p);
      f.probs.push_back(p);
    }
    return f;
  }
};

/// One discretized segment, nodes relabelled 0..L.
struct TinySegment {
  PairTable<double> pathloss;
  DiscreteFading fading;
  std::vector<double> power_levels;
  double pbar = 1.0;
  PowerMetric metric = PowerMetric::episode_ratio;

  static TinySegment make(const Topology& topology, Segment segment, DiscreteFading fading,
                          std::vector<double> power_levels, double pbar,
                          PowerMetric metric = PowerMetric::episode_ratio) {
    if (!(segment.head < segment.end) || segment.end > topology.last_node()) {
      throw std::invalid_argument("TinySegment: need head < end <= M");
    }
    TinySegment t;
    const std::size_t n = segment.hops() + 1;
    t.pathloss = PairTable<double>(n, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        t.pathloss(a, b) = topology.pathloss(segment.head + a, segment.head + b);
      }
    }
    t.fading = std::move(fading);
    t.power_levels = std::move(power_levels);
    t.pbar = pbar;
    t.metric = metric;
    t.validate();
    return t;
  }

  void validate() const {
    fading.validate();
    if (pathloss.node_count() < 2) throw std::invalid_argument("TinySegment: need at least one hop");
    if (power_levels.empty() || power_levels.size() > 8) {
      throw std::invalid_argument("TinySegment: need 1 to 8 power levels");
    }
    for (std::size_t k = 0; k < power_levels.size(); ++k) {
      if (!(power_levels[k] > 0.0) || (k > 0 && !(power_levels[k] > power_levels[k - 1]))) {
        throw std::invalid_argument("TinySegment: power levels must be positive and increasing");
      }
    }
    if (!(pbar >= 0.0)) throw std::invalid_argument("TinySegment: pbar must be >= 0");
  }

  std::size_t hops() const { return pathloss.node_count() - 1; }
  /// Fading rows a holder at s can see: K^(L - s).
  std::size_t combos(std::size_t s) const {
    std::size_t c = 1;
    for (std::size_t k = s; k < hops(); ++k) c *= fading.levels.size();
    return c;
  }
  /// (next hop, power level) pairs at s.
  std::size_t actions(std::size_t s) const { return (hops() - s) * power_levels.size(); }

  /// Digit k of `combo` (base K) is the fading level of the link s -> s+1+k.
  std::size_t level_of(std::size_t combo, std::size_t k) const {
    for (std::size_t d = 0; d < k; ++d) combo /= fading.levels.size();
    return combo % fading.levels.size();
  }
  double combo_probability(std::size_t s, std::size_t combo) const {
    double p = 1.0;
    for (std::size_t k = 0; k < hops() - s; ++k) p *= fading.probs[level_of(combo, k)];
    return p;
  }
  double gain(std::size_t s, std::size_t combo, std::size_t m) const {
    return fading.levels[level_of(combo, m - s - 1)] * pathloss(s, m);
  }
  std::size_t next_of(std::size_t s, std::size_t action) const {
    return s + 1 + action / power_levels.size();
  }
  double power_of(std::size_t action) const { return power_levels[action % power_levels.size()]; }

  bool feasible(double power) const { return power <= pbar * (1.0 + kFeasibilitySlack); }
};

/// action[s][combo] for s = 0..L-1.
struct DiscretePolicy {
  std::vector<std::vector<std::uint16_t>> action;
};

struct PolicyValue {
  /// E[1 / sum T].
  double rate = 0.0;
  double power_episode_ratio = 0.0;
  double power_ratio_of_means = 0.0;
  double mean_time = 0.0;

  double power(PowerMetric m) const {
    return m == PowerMetric::episode_ratio ? power_episode_ratio : power_ratio_of_means;
  }
};

/// One terminal outcome of a packet started at some node: probability,
/// accumulated time and energy per nat.
struct Outcome {
  double prob;
  double time;
  double energy;
};

/// Every outcome of `policy` from node s, depth-first in (combo) order.
inline std::vector<Outcome> outcomes_from(const TinySegment& seg, const DiscretePolicy& policy,
                                          std::size_t s) {
  std::vector<Outcome> out;
  auto walk = [&](auto&& self, std::size_t node, double prob, double time, double energy) -> void {
    if (node == seg.hops()) {
      out.push_back({prob, time, energy});
      return;
    }
    for (std::size_t c = 0; c < seg.combos(node); ++c) {
      const std::size_t a = policy.action[node][c];
      const std::size_t m = seg.next_of(node, a);
      const double p = seg.power_of(a);
      const double t = 1.0 / std::log1p(seg.gain(node, c, m) * p);
      self(self, m, prob * seg.combo_probability(node, c), time + t, energy + p * t);
    }
  };
  walk(walk, s, 1.0, 0.0, 0.0);
  return out;
}

/// Exact rate and power of a policy, summing over every fading realization.
inline PolicyValue evaluate_policy(const TinySegment& seg, const DiscretePolicy& policy) {
  PolicyValue v;
  double mean_energy = 0.0;
  for (const Outcome& o : outcomes_from(seg, policy, 0)) {
    v.rate += o.prob / o.time;
    v.power_episode_ratio += o.prob * o.energy / o.time;
    v.mean_time += o.prob * o.time;
    mean_energy += o.prob * o.energy;
  }
  v.power_ratio_of_means = mean_energy / v.mean_time;
  return v;
}

inline DiscretePolicy empty_policy(const TinySegment& seg) {
  DiscretePolicy p;
  p.action.resize(seg.hops());
  for (std::size_t s = 0; s < seg.hops(); ++s) p.action[s].assign(seg.combos(s), 0);
  return p;
}

/// Number of deterministic causal policies, as a double (may be huge).
inline double policy_count(const TinySegment& seg, std::size_t from = 0) {
  double n = 1.0;
  for (std::size_t s = from; s < seg.hops(); ++s) {
    n *= std::pow(static_cast<double>(seg.actions(s)), static_cast<double>(seg.combos(s)));
  }
  return n;
}

// ---------------------------------------------------------------------------
// Lagrangian recursion on a discretized segment
// ---------------------------------------------------------------------------

namespace detail {

inline double grid_g(const TinySegment& seg, double gain, std::size_t level, double lambda) {
  const double p = seg.power_levels[level];
  return (1.0 + lambda * (p - seg.pbar)) / std::log1p(gain * p);
}

}  // namespace detail

/// J(L) = 0, J(s) = sum_c Pr(c) min_{m, P} [g + J(m)], exact.
inline std::vector<double> discrete_recursion(const TinySegment& seg, double lambda,
                                              DiscretePolicy* policy = nullptr) {
  const std::size_t L = seg.hops();
  std::vector<double> J(L + 1, 0.0);
  if (policy) *policy = empty_policy(seg);
  for (std::size_t s = L; s-- > 0;) {
    double sum = 0.0;
    for (std::size_t c = 0; c < seg.combos(s); ++c) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_action = 0;
      for (std::size_t m = s + 1; m <= L; ++m) {
        // Cheapest level first, then the hop, as in the continuous decision.
        double level_cost = std::numeric_limits<double>::infinity();
        std::size_t level = 0;
        for (std::size_t k = 0; k < seg.power_levels.size(); ++k) {
          const double g = detail::grid_g(seg, seg.gain(s, c, m), k, lambda);
          if (g < level_cost) {
            level_cost = g;
            level = k;
          }
        }
        const double score = level_cost + J[m];
        if (score < best) {
          best = score;
          best_action = (m - s - 1) * seg.power_levels.size() + level;
        }
      }
      sum += seg.combo_probability(s, c) * best;
      if (policy) policy->action[s][c] = static_cast<std::uint16_t>(best_action);
    }
    J[s] = sum;
  }
  return J;
}

/// E[sum g] of a fixed policy, accumulated in the same order as the
/// recursion so that the optimal policy reproduces J bit for bit.
inline std::vector<double> lagrangian_values(const TinySegment& seg, const DiscretePolicy& policy,
                                             double lambda) {
  const std::size_t L = seg.hops();
  std::vector<double> V(L + 1, 0.0);
  for (std::size_t s = L; s-- > 0;) {
    double sum = 0.0;
    for (std::size_t c = 0; c < seg.combos(s); ++c) {
      const std::size_t a = policy.action[s][c];
      const std::size_t m = seg.next_of(s, a);
      const double g = detail::grid_g(seg, seg.gain(s, c, m), a % seg.power_levels.size(), lambda);
      sum += seg.combo_probability(s, c) * (g + V[m]);
    }
    V[s] = sum;
  }
  return V;
}

struct EnumeratedLagrangian {
  double value = 0.0;
  double policies = 0.0;
};

/// min over all policies of E[sum g] from the head. Every policy of nodes
/// 1..L-1 is enumerated; the head's choice separates across its fading rows,
/// so it is minimized row by row over all of its actions.
inline EnumeratedLagrangian enumerate_lagrangian(const TinySegment& seg, double lambda) {
  const std::size_t L = seg.hops();
  const double work = policy_count(seg, 1) * static_cast<double>(seg.combos(0));
  if (work > kEnumerationGuard) {
    throw EnumerationGuardError("enumerate_lagrangian: " + std::to_string(work) +
                                " evaluations exceed the guard");
  }
  DiscretePolicy pol = empty_policy(seg);
  EnumeratedLagrangian out{std::numeric_limits<double>::infinity(), policy_count(seg)};
  for (;;) {
    const std::vector<double> V = lagrangian_values(seg, pol, lambda);
    double sum = 0.0;
    for (std::size_t c = 0; c < seg.combos(0); ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < seg.actions(0); ++a) {
        const std::size_t m = seg.next_of(0, a);
        const double g = detail::grid_g(seg, seg.gain(0, c, m), a % seg.power_levels.size(), lambda);
        best = std::min(best, g + V[m]);
      }
      sum += seg.combo_probability(0, c) * best;
    }
    out.value = std::min(out.value, sum);
    // Odometer over the downstream nodes.
    std::size_t s = 1;
    for (; s < L; ++s) {
      bool carried = true;
      for (auto& digit : pol.action[s]) {
        if (++digit < seg.actions(s)) {
          carried = false;
          break;
        }
        digit = 0;
      }
      if (!carried) break;
    }
    if (s >= L) break;
  }
  return out;
}

struct DiscreteCalibration {
  double lambda = 0.0;
  DiscretePolicy policy;
  PolicyValue value;
  /// The budget cannot be met at any multiplier (lowest level too high).
  bool infeasible = false;
  bool budget_slack = false;
  std::size_t iterations = 0;
};

/// The lower-bound policy on a discretized segment: the smallest multiplier
/// whose policy meets the budget. Power is a step function of lambda here,
/// so the search stops on the feasible side of the last step.
inline DiscreteCalibration calibrate_discrete(const TinySegment& seg) {
  DiscreteCalibration out;
  auto at = [&](double lambda) {
    DiscreteCalibration c;
    c.lambda = lambda;
    discrete_recursion(seg, lambda, &c.policy);
    c.value = evaluate_policy(seg, c.policy);
    return c;
  };
  if (!(seg.pbar > 0.0)) {
    out = at(0.0);
    out.infeasible = true;
    out.value = {};
    return out;
  }
  out = at(0.0);
  if (seg.feasible(out.value.power(seg.metric))) {
    out.budget_slack = true;
    return out;
  }
  double lo = 0.0;
  double hi = 1.0 / seg.pbar;
  DiscreteCalibration best = at(hi);
  std::size_t iterations = 1;
  while (!seg.feasible(best.value.power(seg.metric))) {
    lo = hi;
    hi *= 4.0;
    best = at(hi);
    if (++iterations > 200 || hi > 1e15 / seg.pbar) {
      best.infeasible = true;
      best.value = {};
      best.iterations = iterations;
      return best;
    }
  }
  if (lo == 0.0) lo = hi * 1e-12;
  for (int k = 0; k < 100 && hi / lo > 1.0 + 1e-12; ++k, ++iterations) {
    const double mid = std::sqrt(lo * hi);
    DiscreteCalibration c = at(mid);
    if (seg.feasible(c.value.power(seg.metric))) {
      hi = mid;
      best = std::move(c);
    } else {
      lo = mid;
    }
  }
  best.iterations = iterations;
  return best;
}

// ---------------------------------------------------------------------------
// Subproblem oracles
// ---------------------------------------------------------------------------

struct OracleResult {
  /// Best E[1 / sum T] among policies meeting the budget; 0 when none does.
  double rate = 0.0;
  double power = 0.0;
  bool feasible = false;
  DiscretePolicy policy;
  /// Policies (flat) or partial configurations (recursive) examined.
  double enumerated = 0.0;
};

/// Flat enumeration: every policy is decoded from its index and evaluated
/// exactly. Index ranges are split across threads; the reduction keeps the
/// largest rate and, among equal rates, the smallest index.
inline OracleResult brute_force_subproblem_flat(const TinySegment& seg, unsigned threads = 1) {
  const double total = policy_count(seg);
  if (total > kEnumerationGuard) {
    throw EnumerationGuardError("brute_force_subproblem: " + std::to_string(total) +
                                " policies exceed the guard");
  }
  const auto count = static_cast<std::uint64_t>(total);
  auto decode = [&](std::uint64_t index) {
    DiscretePolicy p = empty_policy(seg);
    for (std::size_t s = 0; s < seg.hops(); ++s) {
      for (auto& digit : p.action[s]) {
        digit = static_cast<std::uint16_t>(index % seg.actions(s));
        index /= seg.actions(s);
      }
    }
    return p;
  };
  struct Best {
    double rate = -1.0;
    double power = 0.0;
    std::uint64_t index = 0;
  };
  auto scan = [&](std::uint64_t from, std::uint64_t to, Best& best) {
    for (std::uint64_t k = from; k < to; ++k) {
      const PolicyValue v = evaluate_policy(seg, decode(k));
      const double power = v.power(seg.metric);
      if (seg.feasible(power) && v.rate > best.rate) best = {v.rate, power, k};
    }
  };
  threads = std::max(1u, threads);
  std::vector<Best> partial(threads);
  std::vector<std::thread> pool;
  const std::uint64_t chunk = (count + threads - 1) / threads;
  for (unsigned w = 0; w < threads; ++w) {
    const std::uint64_t from = std::min<std::uint64_t>(count, w * chunk);
    const std::uint64_t to = std::min<std::uint64_t>(count, from + chunk);
    if (threads == 1) {
      scan(from, to, partial[w]);
    } else {
      pool.emplace_back(scan, from, to, std::ref(partial[w]));
    }
  }
  for (auto& t : pool) t.join();
  Best best;
  for (const Best& b : partial) {
    if (b.rate > best.rate || (b.rate == best.rate && b.rate >= 0.0 && b.index < best.index)) best = b;
  }
  OracleResult out;
  out.enumerated = total;
  if (best.rate >= 0.0) {
    out.rate = best.rate;
    out.power = best.power;
    out.feasible = true;
    out.policy = decode(best.index);
  }
  return out;
}

namespace detail {

struct KnapsackItem {
  double cost;
  double value;
  std::uint64_t code;
};

/// All selections of one item per group for groups [from, to).
inline std::vector<KnapsackItem> knapsack_half(const std::vector<std::vector<KnapsackItem>>& groups,
                                               std::size_t from, std::size_t to) {
  std::vector<KnapsackItem> out{{0.0, 0.0, 0}};
  std::uint64_t radix = 1;
  for (std::size_t g = from; g < to; ++g) {
    std::vector<KnapsackItem> next;
    next.reserve(out.size() * groups[g].size());
    for (const auto& base : out) {
      for (std::size_t a = 0; a < groups[g].size(); ++a) {
        next.push_back({base.cost + groups[g][a].cost, base.value + groups[g][a].value,
                        base.code + radix * a});
      }
    }
    radix *= groups[g].size();
    out = std::move(next);
  }
  return out;
}

/// Best one-item-per-group selection with total cost <= budget; value -1
/// when none fits.
struct HeadChoice {
  double value = -1.0;
  std::vector<std::uint16_t> actions;
};

inline HeadChoice solve_head(const std::vector<std::vector<KnapsackItem>>& groups,
                             std::size_t left_rows, double budget, bool unconstrained) {
  const std::size_t rows = groups.size();
  HeadChoice out;
  if (unconstrained) {
    out.value = 0.0;
    out.actions.assign(rows, 0);
    for (std::size_t c = 0; c < rows; ++c) {
      auto& pick = out.actions[c];
      for (std::size_t a = 1; a < groups[c].size(); ++a) {
        if (groups[c][a].value > groups[c][pick].value) pick = static_cast<std::uint16_t>(a);
      }
      out.value += groups[c][pick].value;
    }
    return out;
  }
  const auto left = knapsack_half(groups, 0, left_rows);
  auto right = knapsack_half(groups, left_rows, rows);
  std::sort(right.begin(), right.end(), [](const auto& x, const auto& y) { return x.cost < y.cost; });
  std::vector<std::size_t> prefix_best(right.size());
  for (std::size_t k = 0; k < right.size(); ++k) {
    prefix_best[k] = k > 0 && right[prefix_best[k - 1]].value >= right[k].value ? prefix_best[k - 1] : k;
  }
  const KnapsackItem* best_l = nullptr;
  const KnapsackItem* best_r = nullptr;
  for (const auto& l : left) {
    const auto it = std::upper_bound(right.begin(), right.end(), budget - l.cost,
                                     [](double v, const auto& x) { return v < x.cost; });
    if (it == right.begin()) continue;
    const auto& r = right[prefix_best[static_cast<std::size_t>(it - right.begin()) - 1]];
    if (l.value + r.value > out.value) {
      out.value = l.value + r.value;
      best_l = &l;
      best_r = &r;
    }
  }
  if (!best_l) return out;
  out.actions.resize(rows);
  std::uint64_t lc = best_l->code;
  std::uint64_t rc = best_r->code;
  for (std::size_t c = 0; c < rows; ++c) {
    std::uint64_t& code = c < left_rows ? lc : rc;
    out.actions[c] = static_cast<std::uint16_t>(code % groups[c].size());
    code /= groups[c].size();
  }
  return out;
}

}  // namespace detail

/// Recursive enumeration: every policy of nodes 1..L-1 is enumerated, and
/// for each one the head's choice is solved exactly. Both E[1/sum T] and the
/// per-episode power are linear in the head's per-row choices once the
/// downstream policy is fixed, so the head problem is a multiple-choice
/// knapsack, solved by meet-in-the-middle over its fading rows.
inline OracleResult brute_force_subproblem_recursive(const TinySegment& seg) {
  if (seg.metric != PowerMetric::episode_ratio) {
    throw std::invalid_argument("brute_force_subproblem_recursive: per-episode power only");
  }
  const std::size_t L = seg.hops();
  const std::size_t rows = seg.combos(0);
  // When even the top level fits the budget every policy is feasible and the
  // head simply takes the best action on each row.
  const bool unconstrained = seg.feasible(seg.power_levels.back());
  const std::size_t left_rows = unconstrained ? 0 : rows / 2;
  const double half_work =
      unconstrained ? static_cast<double>(rows * seg.actions(0))
                    : std::pow(static_cast<double>(seg.actions(0)), static_cast<double>(left_rows)) +
                          std::pow(static_cast<double>(seg.actions(0)),
                                   static_cast<double>(rows - left_rows));
  const double work = policy_count(seg, 1) * half_work;
  if (work > kEnumerationGuard) {
    throw EnumerationGuardError("brute_force_subproblem: " + std::to_string(work) +
                                " configurations exceed the guard");
  }
  const double budget = seg.pbar * (1.0 + kFeasibilitySlack);

  DiscretePolicy pol = empty_policy(seg);
  OracleResult out;
  out.enumerated = work;
  double best_value = -1.0;
  DiscretePolicy best_policy;
  std::vector<std::vector<detail::KnapsackItem>> groups(rows);
  for (;;) {
    std::vector<std::vector<Outcome>> tails(L + 1);
    tails[L] = {{1.0, 0.0, 0.0}};
    for (std::size_t m = 1; m < L; ++m) tails[m] = outcomes_from(seg, pol, m);
    for (std::size_t c = 0; c < rows; ++c) {
      const double pc = seg.combo_probability(0, c);
      groups[c].clear();
      for (std::size_t a = 0; a < seg.actions(0); ++a) {
        const std::size_t m = seg.next_of(0, a);
        const double p = seg.power_of(a);
        const double t = 1.0 / std::log1p(seg.gain(0, c, m) * p);
        double value = 0.0;
        double cost = 0.0;
        for (const Outcome& o : tails[m]) {
          value += o.prob / (t + o.time);
          cost += o.prob * (p * t + o.energy) / (t + o.time);
        }
        groups[c].push_back({pc * cost, pc * value, a});
      }
    }
    const auto head = detail::solve_head(groups, left_rows, budget, unconstrained);
    if (head.value > best_value) {
      best_value = head.value;
      best_policy = pol;
      best_policy.action[0] = head.actions;
    }
    std::size_t s = 1;
    for (; s < L; ++s) {
      bool carried = true;
      for (auto& digit : pol.action[s]) {
        if (++digit < seg.actions(s)) {
          carried = false;
          break;
        }
        digit = 0;
      }
      if (!carried) break;
    }
    if (s >= L) break;
  }
  if (best_value >= 0.0) {
    const PolicyValue v = evaluate_policy(seg, best_policy);
    out.rate = v.rate;
    out.power = v.power(seg.metric);
    out.feasible = true;
    out.policy = std::move(best_policy);
  }
  return out;
}

/// Optimal E[1 / sum T] over deterministic causal policies meeting the
/// budget. Uses the recursive enumeration when it applies, the flat one
/// otherwise.
inline OracleResult brute_force_subproblem(const TinySegment& seg) {
  if (seg.metric == PowerMetric::episode_ratio) return brute_force_subproblem_recursive(seg);
  return brute_force_subproblem_flat(seg);
}

// ---------------------------------------------------------------------------
// Whole-problem oracle
// ---------------------------------------------------------------------------

/// A discretized network: at most four nodes, iid availability.
struct TinyInstance {
  Topology topology;
  DiscreteFading fading;
  std::vector<double> power_levels;
  double p_avail = 1.0;
  PowerMetric metric = PowerMetric::episode_ratio;

  void validate() const {
    if (topology.node_count() > 4) throw std::invalid_argument("TinyInstance: at most 4 nodes");
    fading.validate();
    if (!(p_avail > 0.0) || p_avail > 1.0) throw std::invalid_argument("TinyInstance: p_avail in (0, 1]");
  }

  ProbabilityTable probabilities() const {
    return ProbabilityTable::from_model(PuActivityModel::iid(p_avail), topology);
  }

  TinySegment segment(std::size_t i, std::size_t j, double pbar) const {
    return TinySegment::make(topology, {i, j}, fading, power_levels, pbar, metric);
  }
};

/// Rates of the lower-bound policy on a discretized network, for the master.
class DiscreteRateModel {
 public:
  explicit DiscreteRateModel(TinyInstance instance) : instance_(std::move(instance)) {
    instance_.validate();
  }

  RateSample evaluate(std::size_t i, std::size_t j, double pbar) const {
    const DiscreteCalibration c = calibrate_discrete(instance_.segment(i, j, pbar));
    RateSample r;
    if (c.infeasible) return r;
    r.rate = c.value.rate;
    r.lambda = c.lambda;
    r.slope = c.lambda * c.value.rate;
    r.power = c.value.power(instance_.metric);
    return r;
  }

  const TinyInstance& instance() const { return instance_; }

 private:
  TinyInstance instance_;
};

struct OriginalResult {
  std::vector<PairIndex> pairs;
  std::vector<double> allocation;
  std::vector<double> rates;
  std::vector<double> sections;
  double objective = 0.0;
  std::size_t allocations = 0;
};

/// Maximizes min_m Ū_m over a simplex grid of budget shares: pair k gets
/// P̄_k = (n_k / grid) P0 / Pr_k with sum n_k = grid, and every pair runs its
/// optimal policy for that budget.
inline OriginalResult brute_force_original(const TinyInstance& inst, double p0,
                                           std::size_t grid = 20) {
  inst.validate();
  if (grid < 1) throw std::invalid_argument("brute_force_original: grid >= 1");
  const MasterProblem mp = MasterProblem::make(inst.probabilities(), p0, 0.0);
  const std::size_t n = mp.pairs.size();
  double compositions = 1.0;
  for (std::size_t k = 1; k < n; ++k) {
    compositions = compositions * static_cast<double>(grid + k) / static_cast<double>(k);
  }
  if (compositions > kEnumerationGuard) {
    throw EnumerationGuardError("brute_force_original: allocation grid exceeds the guard");
  }

  std::vector<std::vector<double>> rate(n, std::vector<double>(grid + 1, 0.0));
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t q = 1; q <= grid; ++q) {
      const double pbar = static_cast<double>(q) / static_cast<double>(grid) * p0 / mp.weights[k];
      rate[k][q] = brute_force_subproblem(inst.segment(mp.pairs[k].head, mp.pairs[k].end, pbar)).rate;
    }
  }

  OriginalResult out;
  out.pairs = mp.pairs;
  out.objective = -1.0;
  std::vector<std::size_t> share(n, 0);
  PairTable<double> u(inst.topology.node_count(), 0.0);
  auto visit = [&]() {
    for (std::size_t k = 0; k < n; ++k) u(mp.pairs[k].head, mp.pairs[k].end) = rate[k][share[k]];
    const auto sections = section_rates(mp.pr, u);
    const double obj = *std::min_element(sections.begin(), sections.end());
    ++out.allocations;
    if (obj > out.objective) {
      out.objective = obj;
      out.sections = sections;
      out.allocation.resize(n);
      out.rates.resize(n);
      for (std::size_t k = 0; k < n; ++k) {
        out.allocation[k] = static_cast<double>(share[k]) / static_cast<double>(grid) * p0 / mp.weights[k];
        out.rates[k] = rate[k][share[k]];
      }
    }
  };
  auto place = [&](auto&& self, std::size_t k, std::size_t left) -> void {
    if (k + 1 == n) {
      share[k] = left;
      visit();
      return;
    }
    for (std::size_t q = 0; q <= left; ++q) {
      share[k] = q;
      self(self, k + 1, left - q);
    }
  };
  if (n > 0) place(place, 0, grid);
  out.objective = std::max(out.objective, 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Max-min exchange
// ---------------------------------------------------------------------------

/// f[i][z][x]: the i-th function of its own variable x and a variable z that
/// all functions share. With one z value the functions are independent.
struct ExchangeInstance {
  std::vector<std::vector<double>> a;
  std::vector<std::vector<std::vector<double>>> f;

  std::size_t sections() const { return a.size(); }
  std::size_t terms() const { return f.size(); }
  std::size_t shared() const { return f.empty() ? 0 : f[0].size(); }
};

struct ExchangeResult {
  /// max_x min_m, min_m max_x, min_m sum_i A_mi max f_i.
  double v = 0.0;
  double v_prime = 0.0;
  double bound = 0.0;
  bool equal = false;
};

inline ExchangeInstance random_exchange_instance(Rng& rng, std::size_t max_sections = 4,
                                                 std::size_t max_terms = 4, std::size_t max_domain = 4,
                                                 std::size_t shared = 1) {
  auto pick = [&](std::size_t hi) { return 1 + static_cast<std::size_t>(uniform01(rng) * hi); };
  ExchangeInstance inst;
  const std::size_t M = pick(max_sections);
  const std::size_t L = pick(max_terms);
  inst.a.assign(M, std::vector<double>(L));
  for (auto& row : inst.a) {
    for (double& v : row) v = uniform01(rng) < 0.2 ? 0.0 : uniform01(rng);
  }
  inst.f.resize(L);
  for (auto& fi : inst.f) {
    const std::size_t d = pick(max_domain);
    fi.assign(shared, std::vector<double>(d));
    for (auto& fz : fi) {
      for (double& v : fz) v = 2.0 * uniform01(rng) - 0.5;
    }
  }
  return inst;
}

/// Two sections, two terms, f_1 = z and f_2 = 1 - z: max-min is 0 while
/// min-max is 1.
inline ExchangeInstance coupled_exchange_control() {
  ExchangeInstance inst;
  inst.a = {{1.0, 0.0}, {0.0, 1.0}};
  inst.f = {{{0.0}, {1.0}}, {{1.0}, {0.0}}};
  return inst;
}

/// Exhaustive V, V' and the separable bound.
inline ExchangeResult verify_exchange_lemma(const ExchangeInstance& inst) {
  const std::size_t M = inst.sections();
  const std::size_t L = inst.terms();
  const std::size_t Z = inst.shared();
  if (M == 0 || L == 0 || Z == 0) throw std::invalid_argument("verify_exchange_lemma: empty instance");
  for (const auto& row : inst.a) {
    if (row.size() != L) throw std::invalid_argument("verify_exchange_lemma: A must be M x L");
    for (double v : row) {
      if (!(v >= 0.0)) throw std::invalid_argument("verify_exchange_lemma: A must be >= 0");
    }
  }
  auto section_value = [&](std::size_t m, std::size_t z, const std::vector<std::size_t>& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < L; ++i) s += inst.a[m][i] * inst.f[i][z][x[i]];
    return s;
  };
  const double inf = std::numeric_limits<double>::infinity();
  ExchangeResult r;
  r.v = -inf;
  std::vector<double> section_max(M, -inf);
  std::vector<std::size_t> x(L, 0);
  for (std::size_t z = 0; z < Z; ++z) {
    std::fill(x.begin(), x.end(), 0);
    for (;;) {
      double worst = inf;
      for (std::size_t m = 0; m < M; ++m) {
        const double s = section_value(m, z, x);
        worst = std::min(worst, s);
        section_max[m] = std::max(section_max[m], s);
      }
      r.v = std::max(r.v, worst);
      std::size_t i = 0;
      for (; i < L; ++i) {
        if (++x[i] < inst.f[i][z].size()) break;
        x[i] = 0;
      }
      if (i == L) break;
    }
  }
  r.v_prime = *std::min_element(section_max.begin(), section_max.end());
  r.bound = inf;
  for (std::size_t m = 0; m < M; ++m) {
    double s = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      double best = -inf;
      for (const auto& fz : inst.f[i]) best = std::max(best, *std::max_element(fz.begin(), fz.end()));
      s += inst.a[m][i] * best;
    }
    r.bound = std::min(r.bound, s);
  }
  r.equal = r.v == r.v_prime && r.v == r.bound;
  return r;
}

// ---------------------------------------------------------------------------
// Centered monotone sequences
// ---------------------------------------------------------------------------

struct SequenceInstance {
  std::vector<double> p;
  std::vector<double> a;
  std::vector<double> b;
};

struct SequenceResult {
  double value = 0.0;
  /// Rounding allowance: the centered sums are zero only to a few ulps.
  double tolerance = 0.0;
  bool holds = false;
};

/// Weights p > 0 summing to 1, a non-decreasing, b non-increasing, both
/// centered under p. Length 1 to max_length.
inline SequenceInstance random_centered_sequences(Rng& rng, std::size_t max_length = 21) {
  const std::size_t n = 1 + static_cast<std::size_t>(uniform01(rng) * max_length);
  SequenceInstance s;
  s.p.resize(n);
  s.a.resize(n);
  s.b.resize(n);
  double total = 0.0;
  for (auto& v : s.p) total += (v = uniform01(rng) + 1e-3);
  for (auto& v : s.p) v /= total;
  for (auto& v : s.a) v = 2.0 * uniform01(rng) - 1.0;
  for (auto& v : s.b) v = 2.0 * uniform01(rng) - 1.0;
  std::sort(s.a.begin(), s.a.end());
  std::sort(s.b.begin(), s.b.end(), std::greater<>());
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    ma += s.p[k] * s.a[k];
    mb += s.p[k] * s.b[k];
  }
  for (std::size_t k = 0; k < n; ++k) {
    s.a[k] -= ma;
    s.b[k] -= mb;
  }
  return s;
}

inline SequenceResult verify_sequence_lemma(const SequenceInstance& s) {
  const std::size_t n = s.p.size();
  if (s.a.size() != n || s.b.size() != n || n == 0) {
    throw std::invalid_argument("verify_sequence_lemma: sequences must have equal, nonzero length");
  }
  SequenceResult r;
  double ma = 0.0;
  double mb = 0.0;
  double scale = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    r.value += s.p[k] * s.a[k] * s.b[k];
    ma += s.p[k] * s.a[k];
    mb += s.p[k] * s.b[k];
    scale += s.p[k] * std::abs(s.a[k] * s.b[k]);
  }
  // sum p a b <= (sum p a)(sum p b) exactly; the right side is zero up to
  // the centering residue.
  const double eps = std::numeric_limits<double>::epsilon();
  r.tolerance = std::max(0.0, ma * mb) + 4.0 * static_cast<double>(n + 1) * eps * scale;
  r.holds = r.value <= r.tolerance;
  return r;
}

// ---------------------------------------------------------------------------
// Cluster-time covariance
// ---------------------------------------------------------------------------

enum class Verdict { consistent, inconclusive, violated };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::consistent:
      return "consistent";
    case Verdict::inconclusive:
      return "inconclusive";
    case Verdict::violated:
      return "violated";
  }
  return "unknown";
}

/// Reporting rule: inconclusive when the standard error exceeds |estimate|,
/// consistent when the estimate is at most +3 SE, violated otherwise.
inline Verdict covariance_verdict(double estimate, double std_error) {
  if (std_error > std::abs(estimate)) return Verdict::inconclusive;
  return estimate <= 3.0 * std_error ? Verdict::consistent : Verdict::violated;
}

struct CovarianceReport {
  /// Cov(T_r, T_0 + ... + T_{r-1}) for clusters r = 1, 2, ...
  std::vector<double> estimates;
  std::vector<double> std_errors;
  std::vector<Verdict> verdicts;
  Verdict overall = Verdict::consistent;
  std::size_t episodes = 0;
};

/// Clusters are runs of `cluster_size` consecutive nodes counted from the
/// head; T_r is the time of the hops that land in cluster r. Covariances are
/// estimated over `episodes` independent packets. With `deterministic` every
/// fading value is 1 and all times are constant.
inline CovarianceReport verify_covariance_property(const CalibratedPolicy& policy,
                                                   std::size_t cluster_size, std::size_t episodes,
                                                   std::uint64_t seed, bool deterministic = false) {
  if (cluster_size < 1 || episodes < 2) {
    throw std::invalid_argument("verify_covariance_property: cluster_size >= 1, episodes >= 2");
  }
  const auto& p = policy.problem;
  const std::size_t clusters = (p.hops() + cluster_size) / cluster_size;
  std::vector<std::vector<double>> t(episodes, std::vector<double>(clusters, 0.0));
  Rng rng = make_rng(derive_seed(seed, {stream_tag("covariance")}));
  const EpisodeChannel fixed = EpisodeChannel::constant(p.hops());
  for (std::size_t e = 0; e < episodes; ++e) {
    const EpisodeRecord rec = deterministic ? run_segment_episode(policy, fixed)
                                            : run_segment_episode(policy, rng);
    for (std::size_t k = 0; k < rec.times.size(); ++k) {
      t[e][(rec.hops[k + 1] - p.head()) / cluster_size] += rec.times[k];
    }
  }
  CovarianceReport out;
  out.episodes = episodes;
  const double n = static_cast<double>(episodes);
  for (std::size_t r = 1; r < clusters; ++r) {
    // Shifted by the first episode so constant times give exact zeros.
    std::vector<double> xs(episodes);
    std::vector<double> ys(episodes);
    for (std::size_t e = 0; e < episodes; ++e) {
      for (std::size_t q = 0; q < r; ++q) ys[e] += t[e][q];
      xs[e] = t[e][r];
    }
    const double x0 = xs[0];
    const double y0 = ys[0];
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t e = 0; e < episodes; ++e) {
      xs[e] -= x0;
      ys[e] -= y0;
      mx += xs[e];
      my += ys[e];
    }
    mx /= n;
    my /= n;
    double sz = 0.0;
    double sz2 = 0.0;
    for (std::size_t e = 0; e < episodes; ++e) {
      const double z = (xs[e] - mx) * (ys[e] - my);
      sz += z;
      sz2 += z * z;
    }
    const double mean_z = sz / n;
    const double var_z = std::max(0.0, (sz2 / n - mean_z * mean_z) * n / (n - 1.0));
    const double est = sz / (n - 1.0);
    const double se = std::sqrt(var_z / n);
    out.estimates.push_back(est);
    out.std_errors.push_back(se);
    out.verdicts.push_back(covariance_verdict(est, se));
  }
  for (Verdict v : out.verdicts) {
    if (v == Verdict::violated) out.overall = Verdict::violated;
    if (v == Verdict::inconclusive && out.overall == Verdict::consistent) out.overall = Verdict::inconclusive;
  }
  return out;
}

}  // namespace crelay

#endif  // CRELAY_ORACLE_HPP

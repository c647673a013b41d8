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
 * \file crelay/master.hpp
 *
 * \brief Long-timescale power allocation across potential segments.
 *
 * Each potential segment (i, j) gets an average power P̄_ij. Section m
 * (the hop between R_{m-1} and R_m) carries Ū_m = sum over i < m <= j of
 * Pr(i,j) U_ij(P̄_ij); the end-to-end throughput is min_m Ū_m and the
 * budget is sum Pr(i,j) P̄_ij <= P0. The allocation is found by projected
 * subgradient ascent on the concave lower-bound rates.
 */

#ifndef CRELAY_MASTER_HPP
#define CRELAY_MASTER_HPP

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "crelay/model.hpp"
#include "crelay/subpolicy.hpp"

namespace crelay {

// ---------------------------------------------------------------------------
// Section rates
// ---------------------------------------------------------------------------

/// Ū_m = sum_{i < m <= j} Pr(i,j) U(i,j), for 1 <= m <= M.
inline double section_rate(std::size_t m, const ProbabilityTable& pr, const PairTable<double>& u) {
  const std::size_t last = pr.last_node();
  if (m < 1 || m > last) throw std::domain_error("section_rate: need 1 <= m <= M");
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = m; j <= last; ++j) sum += pr(i, j) * u(i, j);
  }
  return sum;
}

inline std::vector<double> section_rates(const ProbabilityTable& pr, const PairTable<double>& u) {
  std::vector<double> out;
  for (std::size_t m = 1; m <= pr.last_node(); ++m) out.push_back(section_rate(m, pr, u));
  return out;
}

/// Residual of the telescoping identity
///   Ū_m - Ū_{m+1} = sum_{i<m} Pr(i,m) U_im - sum_{j>m} Pr(m,j) U_mj,
/// zero up to rounding for any inputs. `sign` is +1; the verification suite
/// passes -1 to confirm that a corrupted identity is caught.
inline double flow_balance_identity(std::size_t m, const ProbabilityTable& pr,
                                    const PairTable<double>& u, double sign = 1.0) {
  const std::size_t last = pr.last_node();
  if (m < 1 || m + 1 > last) throw std::domain_error("flow_balance_identity: need 1 <= m <= M-1");
  double inflow = 0.0, outflow = 0.0;
  for (std::size_t i = 0; i < m; ++i) inflow += pr(i, m) * u(i, m);
  for (std::size_t j = m + 1; j <= last; ++j) outflow += pr(m, j) * u(m, j);
  return (section_rate(m, pr, u) - section_rate(m + 1, pr, u)) - (inflow - sign * outflow);
}

// ---------------------------------------------------------------------------
// Allocation and rate models
// ---------------------------------------------------------------------------

struct PairIndex {
  std::size_t head = 0;
  std::size_t end = 0;
  friend auto operator<=>(const PairIndex&, const PairIndex&) = default;
};

/// The potential segments that receive power, their probabilities, and the
/// budget.
struct MasterProblem {
  ProbabilityTable pr;
  double p0 = 1.0;
  double floor = 0.0;
  std::vector<PairIndex> pairs;
  std::vector<double> weights;

  /// Keeps the pairs j > i with Pr(i,j) > cutoff.
  static MasterProblem make(const ProbabilityTable& pr, double p0, double cutoff = 1e-6,
                            double floor_ratio = 1e-6) {
    if (!(p0 > 0.0) || !std::isfinite(p0)) throw std::invalid_argument("MasterProblem: P0 must be > 0");
    MasterProblem mp;
    mp.pr = pr;
    mp.p0 = p0;
    mp.floor = floor_ratio * p0;
    for (std::size_t i = 0; i < pr.node_count(); ++i) {
      for (std::size_t j = i + 1; j < pr.node_count(); ++j) {
        if (pr(i, j) > cutoff) {
          mp.pairs.push_back({i, j});
          mp.weights.push_back(pr(i, j));
        }
      }
    }
    return mp;
  }

  std::size_t last_node() const { return pr.last_node(); }
  double weight_sum() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
  double budget_used(const std::vector<double>& pbar) const {
    double s = 0.0;
    for (std::size_t k = 0; k < pairs.size(); ++k) s += weights[k] * pbar[k];
    return s;
  }
};

/// One evaluation of a pair's lower-bound rate at an average power.
struct RateSample {
  /// U^LB_ij(P̄), nats per unit time.
  double rate = 0.0;
  double rate_se = 0.0;
  /// Calibrated multiplier lambda*_ij (per unit power, per unit time).
  double lambda = 0.0;
  /// dU^LB/dP̄ in rate units: the multiplier rescaled by the rate.
  double slope = 0.0;
  /// Achieved average power.
  double power = 0.0;
};

template <class M>
concept RateModel = requires(const M& m, std::size_t i, std::size_t j, double p) {
  { m.evaluate(i, j, p) } -> std::convertible_to<RateSample>;
};

/// Rates from calibrated lower-bound policies, memoized on (i, j, P̄ rounded
/// to a relative grid). Thread-safe; a cached and a fresh evaluation of the
/// same key are identical because each pair's seed depends only on (i, j).
class CalibratedRateModel {
 public:
  CalibratedRateModel(Topology topology, SolverOptions options, std::uint64_t seed,
                      double quantum = 0.01)
      : topology_(std::move(topology)), options_(options), seed_(seed), quantum_(quantum) {}

  const Topology& topology() const noexcept { return topology_; }
  const SolverOptions& options() const noexcept { return options_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// Power actually evaluated for a requested P̄ (the cache grid point).
  double quantize(double pbar) const {
    if (quantum_ <= 0.0) return pbar;
    const double step = std::log1p(quantum_);
    return std::exp(std::round(std::log(pbar) / step) * step);
  }

  std::uint64_t pair_seed(std::size_t i, std::size_t j) const {
    return derive_seed(seed_, {stream_tag("pair"), i, j});
  }

  CalibratedPolicy calibrate(std::size_t i, std::size_t j, double pbar) const {
    const auto problem = SegmentProblem::make(topology_, {i, j}, pbar, options_, pair_seed(i, j));
    return calibrate_lambda(problem, options_);
  }

  static RateSample sample_of(const CalibratedPolicy& policy) {
    const auto& r = policy.report;
    return {r.rate, r.rate_se, policy.lambda, policy.lambda * r.rate, r.achieved_power()};
  }

  RateSample evaluate(std::size_t i, std::size_t j, double pbar) const {
    const double q = quantize(pbar);
    const auto key = std::make_tuple(i, j, quantum_ > 0.0 ? std::llround(std::log(q) / std::log1p(quantum_))
                                                          : static_cast<long long>(std::bit_cast<std::int64_t>(q)));
    {
      std::lock_guard<std::mutex> lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    const RateSample s = sample_of(calibrate(i, j, q));
    std::lock_guard<std::mutex> lock(mutex_);
    ++evaluations_;
    return cache_.emplace(key, s).first->second;
  }

  /// Evaluates a batch on `threads` workers; results land in the cache.
  void prefetch(const std::vector<std::pair<PairIndex, double>>& points, unsigned threads) const {
    if (threads <= 1 || points.size() <= 1) {
      for (const auto& [pair, p] : points) evaluate(pair.head, pair.end, p);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (unsigned t = 0; t < threads; ++t) {
      workers.emplace_back([&] {
        for (std::size_t k; (k = next.fetch_add(1)) < points.size();) {
          try {
            evaluate(points[k].first.head, points[k].first.end, points[k].second);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& w : workers) w.join();
    if (failure) std::rethrow_exception(failure);
  }

  std::size_t evaluations() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return evaluations_;
  }

  /// Every cached (P̄, sample) for a pair, in increasing P̄.
  std::vector<std::pair<double, RateSample>> cached(std::size_t i, std::size_t j) const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<std::pair<double, RateSample>> out;
    for (const auto& [key, s] : cache_) {
      if (std::get<0>(key) == i && std::get<1>(key) == j) {
        const double p = quantum_ > 0.0 ? std::exp(std::get<2>(key) * std::log1p(quantum_))
                                         : std::bit_cast<double>(std::get<2>(key));
        out.emplace_back(p, s);
      }
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }

 private:
  Topology topology_;
  SolverOptions options_;
  std::uint64_t seed_;
  double quantum_;
  mutable std::mutex mutex_;
  mutable std::map<std::tuple<std::size_t, std::size_t, long long>, RateSample> cache_;
  mutable std::size_t evaluations_ = 0;
};

// ---------------------------------------------------------------------------
// Objective, subgradient, projection
// ---------------------------------------------------------------------------

struct Evaluation {
  std::vector<RateSample> samples;
  std::vector<double> sections;
  double objective = 0.0;
};

namespace detail {

inline void require_feasible(const MasterProblem& mp, const std::vector<double>& pbar) {
  if (pbar.size() != mp.pairs.size()) throw std::logic_error("allocation size mismatch");
  for (double p : pbar) {
    if (!(p > 0.0) || !std::isfinite(p)) throw std::logic_error("allocation: powers must be > 0");
  }
  if (mp.budget_used(pbar) > mp.p0 * (1.0 + 1e-6)) {
    throw std::logic_error("allocation exceeds the power budget");
  }
}

inline std::vector<double> sections_of(const MasterProblem& mp, const std::vector<double>& rates) {
  std::vector<double> out(mp.last_node(), 0.0);
  for (std::size_t k = 0; k < mp.pairs.size(); ++k) {
    for (std::size_t m = mp.pairs[k].head + 1; m <= mp.pairs[k].end; ++m) {
      out[m - 1] += mp.weights[k] * rates[k];
    }
  }
  return out;
}

}  // namespace detail

template <RateModel Model>
Evaluation evaluate_allocation(const MasterProblem& mp, const std::vector<double>& pbar,
                               const Model& model) {
  detail::require_feasible(mp, pbar);
  Evaluation ev;
  std::vector<double> rates;
  for (std::size_t k = 0; k < mp.pairs.size(); ++k) {
    ev.samples.push_back(model.evaluate(mp.pairs[k].head, mp.pairs[k].end, pbar[k]));
    rates.push_back(ev.samples.back().rate);
  }
  ev.sections = detail::sections_of(mp, rates);
  ev.objective = ev.sections.empty() ? 0.0 : *std::min_element(ev.sections.begin(), ev.sections.end());
  return ev;
}

/// min_m Ū_m at a feasible allocation.
template <RateModel Model>
double objective(const MasterProblem& mp, const std::vector<double>& pbar, const Model& model) {
  return evaluate_allocation(mp, pbar, model).objective;
}

/// Sections whose rate is within `tie` (relative) of the minimum.
inline std::vector<std::size_t> tied_sections(const std::vector<double>& sections, double tie) {
  std::vector<std::size_t> out;
  if (sections.empty()) return out;
  const double lo = *std::min_element(sections.begin(), sections.end());
  for (std::size_t m = 0; m < sections.size(); ++m) {
    if (sections[m] <= lo + tie * std::abs(lo)) out.push_back(m + 1);
  }
  return out;
}

/// Subgradient of min_m Ū_m: for each pair, the average over tied sections m
/// of 1(i < m <= j) Pr(i,j) times the pair's slope.
inline std::vector<double> subgradient(const MasterProblem& mp, const Evaluation& ev,
                                       double tie = 0.01) {
  const auto tied = tied_sections(ev.sections, tie);
  std::vector<double> g(mp.pairs.size(), 0.0);
  for (std::size_t k = 0; k < mp.pairs.size(); ++k) {
    double count = 0.0;
    for (std::size_t m : tied) count += (mp.pairs[k].head < m && m <= mp.pairs[k].end);
    g[k] = count / static_cast<double>(tied.size()) * mp.weights[k] * ev.samples[k].slope;
  }
  return g;
}

template <RateModel Model>
std::vector<double> subgradient(const MasterProblem& mp, const std::vector<double>& pbar,
                                const Model& model, double tie = 0.01) {
  return subgradient(mp, evaluate_allocation(mp, pbar, model), tie);
}

struct Projection {
  std::vector<double> pbar;
  /// Dual variable of the budget constraint.
  double nu = 0.0;
};

/// Projection onto {P̄ >= floor, sum w P̄ <= P0} in the w-weighted Euclidean
/// metric: P̄ = max(floor, y - nu) with nu >= 0 found by bisection.
inline Projection project(const MasterProblem& mp, const std::vector<double>& y) {
  if (y.size() != mp.pairs.size()) throw std::invalid_argument("project: size mismatch");
  const double floor_cost = mp.weight_sum() * mp.floor;
  if (mp.p0 < floor_cost) throw std::invalid_argument("project: P0 is below the floor budget");
  auto apply = [&](double nu) {
    std::vector<double> x(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) x[k] = std::max(mp.floor, y[k] - nu);
    return x;
  };
  Projection out{apply(0.0), 0.0};
  if (mp.budget_used(out.pbar) <= mp.p0) return out;
  double lo = 0.0;
  double hi = 0.0;
  for (double v : y) hi = std::max(hi, v - mp.floor);
  for (int iter = 0; iter < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mp.budget_used(apply(mid)) > mp.p0) lo = mid; else hi = mid;
  }
  out.pbar = apply(hi);
  out.nu = hi;
  return out;
}

// ---------------------------------------------------------------------------
// Ascent
// ---------------------------------------------------------------------------

struct MasterOptions {
  /// Step a / (b + t) in power units; a <= 0 selects 2 P0 / sum Pr, twice
  /// the mean per-pair allocation.
  double step_a = 0.0;
  double step_b = 5.0;
  std::size_t max_iterations = 60;
  /// Stop when the best objective improves by less than this (relative)
  /// over `window` iterations.
  double objective_tolerance = 1e-3;
  std::size_t window = 10;
  double tie_tolerance = 0.01;
  unsigned threads = 1;
};

struct MasterSolution {
  std::vector<PairIndex> pairs;
  std::vector<double> weights;
  std::vector<double> allocation;
  std::vector<RateSample> samples;
  std::vector<double> sections;
  /// Objective at each iterate, and the best-so-far filtered trace.
  std::vector<double> trace;
  std::vector<double> best_trace;
  /// min_m Ū_m at the returned allocation.
  double throughput = 0.0;
  /// Ū_M, the end-to-end weighted form.
  double end_to_end = 0.0;
  /// Section flow balance binding at the bottleneck: Ū_M within the tie
  /// tolerance of the minimum.
  bool balance_active = false;
  std::size_t iterations = 0;
  double budget_used = 0.0;
};

/// Projected subgradient ascent on min_m Ū_m. The direction is the
/// subgradient in the Pr-weighted metric (the pair slopes averaged over tied
/// sections), scaled to unit max-norm, and the step is a/(b+t).
template <RateModel Model>
MasterSolution solve_master(const MasterProblem& mp, const Model& model,
                            const MasterOptions& options = {}) {
  MasterSolution sol;
  sol.pairs = mp.pairs;
  sol.weights = mp.weights;
  if (mp.pairs.empty()) {
    sol.sections.assign(mp.last_node(), 0.0);
    return sol;
  }
  const double a = options.step_a > 0.0 ? options.step_a : 2.0 * mp.p0 / mp.weight_sum();
  std::vector<double> x = project(mp, std::vector<double>(mp.pairs.size(), mp.p0 / mp.weight_sum())).pbar;

  auto evaluate = [&](const std::vector<double>& pbar) {
    if constexpr (requires { model.prefetch(std::vector<std::pair<PairIndex, double>>{}, 1u); }) {
      std::vector<std::pair<PairIndex, double>> points;
      for (std::size_t k = 0; k < mp.pairs.size(); ++k) points.emplace_back(mp.pairs[k], pbar[k]);
      model.prefetch(points, options.threads);
    }
    return evaluate_allocation(mp, pbar, model);
  };

  Evaluation best_ev = evaluate(x);
  std::vector<double> best_x = x;
  Evaluation ev = best_ev;
  for (std::size_t t = 0;; ++t) {
    sol.trace.push_back(ev.objective);
    sol.best_trace.push_back(std::max(ev.objective, sol.best_trace.empty() ? ev.objective
                                                                           : sol.best_trace.back()));
    if (ev.objective > best_ev.objective) {
      best_ev = ev;
      best_x = x;
    }
    sol.iterations = t + 1;
    if (sol.iterations >= options.max_iterations) break;
    const std::size_t n = sol.best_trace.size();
    if (n > options.window) {
      const double then = sol.best_trace[n - 1 - options.window];
      const double now = sol.best_trace.back();
      if (now - then <= options.objective_tolerance * std::abs(now)) break;
    }
    const auto g = subgradient(mp, ev, options.tie_tolerance);
    std::vector<double> dir(g.size());
    double norm = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      dir[k] = g[k] / mp.weights[k];
      norm = std::max(norm, std::abs(dir[k]));
    }
    if (!(norm > 0.0)) break;
    const double step = a / (options.step_b + static_cast<double>(t));
    std::vector<double> y(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) y[k] = x[k] + step * dir[k] / norm;
    x = project(mp, y).pbar;
    ev = evaluate(x);
  }

  sol.allocation = best_x;
  sol.samples = best_ev.samples;
  sol.sections = best_ev.sections;
  sol.throughput = best_ev.objective;
  sol.end_to_end = best_ev.sections.back();
  sol.balance_active =
      sol.end_to_end <= sol.throughput + options.tie_tolerance * std::abs(sol.throughput);
  sol.budget_used = mp.budget_used(best_x);
  return sol;
}

}  // namespace crelay

#endif  // CRELAY_MASTER_HPP

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
 * \file crelay/verify.hpp
 *
 * \brief The verification suite behind `crelay verify`: identity, lemma and
 * oracle checks with a JSON report.
 *
 * Each check returns a status and a detail object. Measurements that carry
 * no pass/fail contract of their own are reported with status "info".
 */

#ifndef CRELAY_VERIFY_HPP
#define CRELAY_VERIFY_HPP

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crelay/master.hpp"
#include "crelay/oracle.hpp"
#include "crelay/random.hpp"
#include "crelay/subpolicy.hpp"

namespace crelay {

inline constexpr int kReportSchemaVersion = 1;

enum class CheckStatus { pass, fail, inconclusive, info };

inline std::string to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass:
      return "pass";
    case CheckStatus::fail:
      return "fail";
    case CheckStatus::inconclusive:
      return "inconclusive";
    case CheckStatus::info:
      return "info";
  }
  return "unknown";
}

struct CheckResult {
  std::string name;
  CheckStatus status = CheckStatus::pass;
  nlohmann::json detail = nlohmann::json::object();
  double seconds = 0.0;
};

/// Runs `body` and stamps the wall-clock time.
inline CheckResult timed(const std::string& name, const std::function<CheckResult()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = body();
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline CheckStatus pass_if(bool ok) { return ok ? CheckStatus::pass : CheckStatus::fail; }

// ---------------------------------------------------------------------------
// Identities and lemmas
// ---------------------------------------------------------------------------

/// Random (Pr, U) on M <= 8; the largest identity residual over every m.
/// `sign` = -1 is the mutation fixture.
inline CheckResult check_flow_balance(std::size_t instances, std::uint64_t seed, double sign = 1.0) {
  Rng rng = make_rng(derive_seed(seed, {stream_tag("verify-flow-balance")}));
  double worst = 0.0;
  std::size_t evaluated = 0;
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t nodes = 3 + static_cast<std::size_t>(uniform01(rng) * 7);
    ProbabilityTable pr(nodes);
    PairTable<double> u(nodes, 0.0);
    for (std::size_t i = 0; i < nodes; ++i) {
      for (std::size_t j = i; j < nodes; ++j) pr.set(i, j, uniform01(rng));
    }
    for (std::size_t i = 0; i < nodes; ++i) {
      for (std::size_t j = i + 1; j < nodes; ++j) u(i, j) = 10.0 * uniform01(rng);
    }
    for (std::size_t m = 1; m + 1 < nodes; ++m) {
      worst = std::max(worst, std::abs(flow_balance_identity(m, pr, u, sign)));
      ++evaluated;
    }
  }
  CheckResult r;
  r.status = pass_if(worst <= 1e-12);
  r.detail = {{"instances", instances}, {"identities", evaluated}, {"max_residual", worst}, {"tolerance", 1e-12}};
  return r;
}

/// Independent instances must exchange exactly; the coupled control must not.
inline CheckResult check_exchange(std::size_t instances, std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, {stream_tag("verify-exchange")}));
  std::size_t exact = 0;
  for (std::size_t k = 0; k < instances; ++k) {
    if (verify_exchange_lemma(random_exchange_instance(rng)).equal) ++exact;
  }
  const auto control = verify_exchange_lemma(coupled_exchange_control());
  std::size_t strict = control.v < control.v_prime ? 1 : 0;
  for (std::size_t k = 0; k < instances; ++k) {
    const auto res = verify_exchange_lemma(random_exchange_instance(rng, 3, 3, 3, 3));
    if (res.v < res.v_prime) ++strict;
  }
  CheckResult r;
  r.status = pass_if(exact == instances && strict >= 1);
  r.detail = {{"instances", instances},
              {"exact", exact},
              {"control_v", control.v},
              {"control_v_prime", control.v_prime},
              {"strict_inequalities_under_coupling", strict}};
  return r;
}

inline CheckResult check_sequence(std::size_t instances, std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, {stream_tag("verify-sequence")}));
  std::size_t violations = 0;
  double largest = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < instances; ++k) {
    const auto res = verify_sequence_lemma(random_centered_sequences(rng));
    if (!res.holds) ++violations;
    largest = std::max(largest, res.value);
  }
  CheckResult r;
  r.status = pass_if(violations == 0);
  r.detail = {{"instances", instances}, {"violations", violations}, {"largest_value", largest}};
  return r;
}

/// Root residual of the power condition on random (G, pbar, lambda), using
/// the condition written out directly; plus the P* = pbar case.
inline CheckResult check_power_foc(std::size_t triples, std::uint64_t seed) {
  auto naive = [](double g, double p, double pbar) {
    return g / ((1.0 + p * g) * std::log(1.0 + p * g) + (pbar - p) * g);
  };
  Rng rng = make_rng(derive_seed(seed, {stream_tag("verify-foc")}));
  double worst = 0.0;
  double worst_trivial = 0.0;
  for (std::size_t k = 0; k < triples; ++k) {
    const double g = std::exp(12.0 * uniform01(rng) - 6.0);
    const double pbar = std::exp(8.0 * uniform01(rng) - 4.0);
    const double lambda = (0.001 + 0.998 * uniform01(rng)) / pbar;
    const double p = solve_optimal_power(g, pbar, lambda, {0.0, std::numeric_limits<double>::infinity()});
    worst = std::max(worst, std::abs(naive(g, p, pbar) - lambda));
    // The multiplier at which pbar itself is optimal.
    const double x = g * pbar;
    const double at_pbar = g / ((1.0 + x) * std::log1p(x));
    const double q = solve_optimal_power(g, pbar, at_pbar, {0.0, std::numeric_limits<double>::infinity()});
    worst_trivial = std::max(worst_trivial, std::abs(q - pbar) / pbar);
  }
  CheckResult r;
  r.status = pass_if(worst <= 1e-9 && worst_trivial <= 1e-9);
  r.detail = {{"triples", triples},
              {"max_residual", worst},
              {"max_relative_error_at_pbar", worst_trivial},
              {"tolerance", 1e-9}};
  return r;
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

/// Evenly spaced chain with unit hops, discretized.
inline TinySegment chain_fixture(std::size_t hops, std::vector<double> levels, double pbar,
                                 DiscreteFading fading, double alpha = 3.0,
                                 PowerMetric metric = PowerMetric::episode_ratio) {
  const Topology topo = Topology::evenly_spaced(hops + 1, static_cast<double>(hops), alpha);
  return TinySegment::make(topo, {0, hops}, std::move(fading), std::move(levels), pbar, metric);
}

/// The recursion's head value against exhaustive enumeration, compared with
/// operator==.
inline CheckResult check_dp_enumeration() {
  struct Case {
    std::size_t hops;
    std::vector<double> levels;
    DiscreteFading fading;
  };
  const std::vector<Case> cases{
      {1, {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0}, DiscreteFading::rayleigh(3)},
      {2, {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0}, DiscreteFading::rayleigh(3)},
      {2, {0.2, 0.5, 1.0, 2.0, 5.0}, DiscreteFading::rayleigh(2)},
      {3, {0.2, 0.5, 1.0, 2.0, 5.0}, DiscreteFading::rayleigh(2)},
  };
  std::size_t compared = 0;
  std::size_t mismatches = 0;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : cases) {
    for (double lambda : {0.0, 0.05, 0.7, 3.0}) {
      const auto seg = chain_fixture(c.hops, c.levels, 1.0, c.fading);
      const double dp = discrete_recursion(seg, lambda)[0];
      const auto en = enumerate_lagrangian(seg, lambda);
      ++compared;
      if (!(dp == en.value)) ++mismatches;
      rows.push_back({{"hops", c.hops},
                      {"gain_levels", c.fading.levels.size()},
                      {"power_levels", c.levels.size()},
                      {"lambda", lambda},
                      {"dp", dp},
                      {"enumerated", en.value},
                      {"policies", en.policies}});
    }
  }
  CheckResult r;
  r.status = pass_if(mismatches == 0);
  r.detail = {{"compared", compared}, {"mismatches", mismatches}, {"cases", rows}};
  return r;
}

/// The lower-bound policy never beats the subproblem optimum.
inline CheckResult check_oracle_dominance() {
  std::size_t compared = 0;
  std::size_t exceed = 0;
  double worst_ratio = 0.0;
  for (std::size_t hops = 1; hops <= 3; ++hops) {
    for (double pbar : {0.3, 1.0, 4.0, 20.0}) {
      const auto seg = chain_fixture(hops, {pbar / 2.0, 1.5 * pbar}, pbar, DiscreteFading::rayleigh(2));
      const auto lb = calibrate_discrete(seg);
      const auto opt = brute_force_subproblem(seg);
      ++compared;
      if (lb.value.rate > opt.rate * (1.0 + 1e-12)) ++exceed;
      if (opt.rate > 0.0) worst_ratio = std::max(worst_ratio, lb.value.rate / opt.rate);
    }
  }
  CheckResult r;
  r.status = pass_if(exceed == 0);
  r.detail = {{"compared", compared}, {"exceeding", exceed}, {"max_lb_over_oracle", worst_ratio}};
  return r;
}

/// Cluster covariance on a faded 4-node chain; "violated" fails, an
/// inconclusive estimate is reported as such.
inline CheckResult check_covariance(std::size_t episodes, std::uint64_t seed) {
  const Topology topo = Topology::evenly_spaced(4, 3.0, 3.0);
  SolverOptions opts;
  opts.mc_samples = 4000;
  const auto policy = calibrate_lambda(SegmentProblem::make(topo, {0, 3}, 1.0, opts, 11), opts);
  const auto det = verify_covariance_property(policy, 2, 100, seed, true);
  const auto rep = verify_covariance_property(policy, 2, episodes, seed);
  bool det_zero = true;
  for (double e : det.estimates) det_zero = det_zero && e == 0.0;
  CheckResult r;
  if (!det_zero || rep.overall == Verdict::violated) {
    r.status = CheckStatus::fail;
  } else {
    r.status = rep.overall == Verdict::consistent ? CheckStatus::pass : CheckStatus::inconclusive;
  }
  r.detail = {{"episodes", episodes},
              {"monotone_gain_topology", topo.monotone_gain()},
              {"estimates", rep.estimates},
              {"std_errors", rep.std_errors},
              {"verdict", to_string(rep.overall)},
              {"deterministic_estimates", det.estimates}};
  return r;
}

// ---------------------------------------------------------------------------
// Matched-discretization experiments
// ---------------------------------------------------------------------------

/// Master + lower-bound subproblems against the joint brute force on a
/// discretized network whose power levels scale with P0.
struct DecompositionPoint {
  double p0 = 0.0;
  double master = 0.0;
  double oracle = 0.0;
  double ratio = 0.0;
  std::size_t allocations = 0;
};

inline TinyInstance decomposition_fixture(double p0) {
  return TinyInstance{Topology::evenly_spaced(4, 3.0, 3.0), DiscreteFading::rayleigh(2), {p0 / 2.0, 2.0 * p0}, 0.85};
}

inline DecompositionPoint decomposition_point(const TinyInstance& inst, double p0, std::size_t grid = 20) {
  const DiscreteRateModel model(inst);
  const MasterProblem mp = MasterProblem::make(inst.probabilities(), p0, 0.0);
  const MasterSolution sol = solve_master(mp, model);
  const OriginalResult opt = brute_force_original(inst, p0, grid);
  DecompositionPoint d;
  d.p0 = p0;
  d.master = sol.throughput;
  d.oracle = opt.objective;
  d.ratio = opt.objective > 0.0 ? sol.throughput / opt.objective : 1.0;
  d.allocations = opt.allocations;
  return d;
}

/// Relative gap (oracle - LB) / oracle of one discretized segment.
inline double lower_bound_gap(const TinySegment& seg) {
  const double opt = brute_force_subproblem(seg).rate;
  const double lb = calibrate_discrete(seg).value.rate;
  return opt > 0.0 ? (opt - lb) / opt : 0.0;
}

struct TrendSeries {
  double alpha = 0.0;
  double pbar = 0.0;
  std::vector<double> gaps;
  bool non_increasing = true;
};

/// Gap over segment lengths 1..max_hops on evenly spaced unit-hop chains
/// (monotone mean gains) with the given power levels (scaled by pbar).
inline TrendSeries lower_bound_trend(double alpha, double pbar, const std::vector<double>& scaled_levels,
                                     std::size_t max_hops) {
  TrendSeries t;
  t.alpha = alpha;
  t.pbar = pbar;
  std::vector<double> levels;
  for (double l : scaled_levels) levels.push_back(l * pbar);
  for (std::size_t hops = 1; hops <= max_hops; ++hops) {
    t.gaps.push_back(lower_bound_gap(chain_fixture(hops, levels, pbar, DiscreteFading::rayleigh(2), alpha)));
  }
  for (std::size_t k = 1; k < t.gaps.size(); ++k) {
    if (t.gaps[k] > t.gaps[k - 1] + 1e-12) t.non_increasing = false;
  }
  return t;
}

inline CheckResult check_decomposition(const std::vector<double>& p0s) {
  CheckResult r;
  r.status = CheckStatus::info;
  nlohmann::json rows = nlohmann::json::array();
  bool meets = true;
  for (double p0 : p0s) {
    const auto d = decomposition_point(decomposition_fixture(p0), p0);
    meets = meets && d.ratio >= 0.99;
    rows.push_back({{"p0", d.p0}, {"master", d.master}, {"oracle", d.oracle}, {"ratio", d.ratio}});
  }
  r.detail = {{"points", rows}, {"threshold", 0.99}, {"meets_threshold", meets}};
  return r;
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

struct VerifyOptions {
  std::uint64_t seed = 1;
  /// -1 flips the flow-balance sign (mutation fixture).
  double flow_balance_sign = 1.0;
  /// Covariance episodes; the decomposition measurement is skipped when
  /// `quick` is set.
  std::size_t covariance_episodes = 100000;
  bool quick = false;
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool passed() const {
    for (const auto& c : checks) {
      if (c.status == CheckStatus::fail) return false;
    }
    return true;
  }
};

inline VerifyReport run_verify(const VerifyOptions& o) {
  VerifyReport rep;
  auto guarded = [&](const std::string& name, const std::function<CheckResult()>& body) {
    try {
      rep.checks.push_back(timed(name, body));
    } catch (const std::exception& e) {
      CheckResult r;
      r.name = name;
      r.status = CheckStatus::fail;
      r.detail = {{"error", e.what()}};
      rep.checks.push_back(r);
    }
  };
  guarded("flow_balance_identity", [&] { return check_flow_balance(100, o.seed, o.flow_balance_sign); });
  guarded("exchange_lemma", [&] { return check_exchange(200, o.seed); });
  guarded("sequence_lemma", [&] { return check_sequence(10000, o.seed); });
  guarded("power_foc", [&] { return check_power_foc(1000, o.seed); });
  guarded("dp_equals_enumeration", [] { return check_dp_enumeration(); });
  guarded("oracle_dominance", [] { return check_oracle_dominance(); });
  guarded("cluster_covariance", [&] { return check_covariance(o.covariance_episodes, o.seed); });
  if (!o.quick) guarded("decomposition_ratio", [] { return check_decomposition({1.0, 10.0}); });
  return rep;
}

inline nlohmann::json to_json(const VerifyReport& rep) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : rep.checks) {
    checks.push_back({{"name", c.name}, {"status", to_string(c.status)}, {"seconds", c.seconds}, {"detail", c.detail}});
  }
  return {{"schema_version", kReportSchemaVersion}, {"kind", "verify_report"}, {"passed", rep.passed()},
          {"checks", checks}};
}

/// Structural check of a report document; returns an empty string when valid.
inline std::string validate_report(const nlohmann::json& j) {
  if (!j.is_object()) return "report must be an object";
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer()) return "schema_version";
  if (j["schema_version"].get<int>() != kReportSchemaVersion) return "unsupported schema_version";
  if (!j.contains("kind") || j["kind"] != "verify_report") return "kind";
  if (!j.contains("passed") || !j["passed"].is_boolean()) return "passed";
  if (!j.contains("checks") || !j["checks"].is_array()) return "checks";
  bool any_fail = false;
  for (const auto& c : j["checks"]) {
    if (!c.is_object()) return "check must be an object";
    if (!c.contains("name") || !c["name"].is_string()) return "check.name";
    if (!c.contains("status") || !c["status"].is_string()) return "check.status";
    const auto s = c["status"].get<std::string>();
    if (s != "pass" && s != "fail" && s != "inconclusive" && s != "info") return "check.status value";
    if (!c.contains("seconds") || !c["seconds"].is_number()) return "check.seconds";
    if (!c.contains("detail") || !c["detail"].is_object()) return "check.detail";
    any_fail = any_fail || s == "fail";
  }
  if (j["passed"].get<bool>() == any_fail) return "passed disagrees with check statuses";
  return {};
}

}  // namespace crelay

#endif  // CRELAY_VERIFY_HPP

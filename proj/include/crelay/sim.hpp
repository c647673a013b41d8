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
 * \file crelay/sim.hpp
 *
 * \brief End-to-end Monte-Carlo runs of the proposed scheme and baselines.
 *
 * Every epoch draws an availability vector, splits the route into continuous
 * segments and runs packets through each segment independently (segments
 * never interfere). Per-pair rates are pooled by segment identity and
 * combined into section rates with the segment probabilities as weights.
 */

#ifndef CRELAY_SIM_HPP
#define CRELAY_SIM_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crelay/master.hpp"
#include "crelay/model.hpp"
#include "crelay/subpolicy.hpp"

namespace crelay {

enum class Scheme { proposed, baseline1, baseline2, baseline3, baseline4 };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::proposed: return "proposed";
    case Scheme::baseline1: return "baseline1";
    case Scheme::baseline2: return "baseline2";
    case Scheme::baseline3: return "baseline3";
    case Scheme::baseline4: return "baseline4";
  }
  return "unknown";
}

inline Scheme parse_scheme(std::string_view name) {
  for (Scheme s : {Scheme::proposed, Scheme::baseline1, Scheme::baseline2, Scheme::baseline3,
                   Scheme::baseline4}) {
    if (name == to_string(s)) return s;
  }
  throw std::domain_error("unknown scheme: " + std::string(name));
}

inline const std::vector<Scheme>& all_schemes() {
  static const std::vector<Scheme> all{Scheme::proposed, Scheme::baseline1, Scheme::baseline2,
                                       Scheme::baseline3, Scheme::baseline4};
  return all;
}

struct SimConfig {
  Topology topology = Topology::evenly_spaced(2, 1.0, 2.0);
  PuActivityModel activity;
  /// Average power budget (linear SNR).
  double p0 = 1.0;
  std::size_t epochs = 500;
  std::size_t episodes_per_epoch = 4;
  /// Pairs seen less often than this are topped up from their own stream.
  std::size_t min_pair_episodes = 2000;
  std::uint64_t seed = 1;
  SolverOptions solver;
  MasterOptions master;
  double pr_cutoff = 1e-6;
  /// Activity draws for Monte-Carlo segment probabilities (spatial mode).
  std::size_t pr_samples = 200000;
  /// Relative grid of the rate-model cache.
  double cache_quantum = 0.01;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("SimConfig: epochs must be >= 1");
    if (!(p0 > 0.0) || !std::isfinite(p0)) throw std::invalid_argument("SimConfig: P0 must be > 0");
    activity.validate();
  }

  ProbabilityTable probabilities() const {
    return ProbabilityTable::from_model(activity, topology, pr_samples,
                                        derive_seed(seed, {stream_tag("pr")}));
  }
};

struct PairMetrics {
  PairIndex pair;
  /// Weight of the pair in the section sums (Pr(i,j), or the time share).
  double weight = 0.0;
  /// Average power assigned (master allocation or the constant power).
  double assigned_power = 0.0;
  double lambda = 0.0;
  SegmentMetrics metrics;
};

struct RunMetrics {
  Scheme scheme = Scheme::proposed;
  std::vector<PairMetrics> pairs;
  std::vector<double> sections;
  std::vector<double> section_se;
  /// min_m Ū_m (headline) and Ū_M (end-to-end weighted form).
  double throughput = 0.0;
  double throughput_se = 0.0;
  double end_to_end = 0.0;
  double end_to_end_se = 0.0;
  /// sum weight * per-episode power ratio, and its standard error.
  double total_power = 0.0;
  double total_power_se = 0.0;
  /// Same with the ratio-of-means power per pair.
  double total_power_rom = 0.0;
  double p0 = 0.0;
  bool balance_active = false;
  std::size_t epochs = 0;
  std::size_t observed_segments = 0;
  /// Observed segments below the probability cutoff (no policy, skipped).
  std::size_t skipped_segments = 0;
};

/// Time and energy per nat of one packet through a segment.
struct EpisodeOutcome {
  double time = 0.0;
  double energy = 0.0;
};

using SegmentRunner = std::function<EpisodeOutcome(const EpisodeChannel&)>;

namespace detail {

inline EpisodeOutcome fixed_route(const Topology& t, PairIndex pair, bool direct, double power,
                                  const EpisodeChannel& channel) {
  EpisodeOutcome out;
  if (direct) {
    const double g = channel.row(0)[pair.end - pair.head - 1] * t.pathloss(pair.head, pair.end);
    out.time = per_hop_time(g, power);
  } else {
    for (std::size_t s = pair.head; s < pair.end; ++s) {
      const double g = channel.row(s - pair.head)[0] * t.pathloss(s, s + 1);
      out.time += per_hop_time(g, power);
    }
  }
  out.energy = power * out.time;
  return out;
}

/// Runs every observed segment's packets, then tops up thin pairs. With
/// `strict`, an observed segment above the probability cutoff that has no
/// runner is a coverage bug; otherwise the scheme simply does not use it.
inline std::map<PairIndex, EpisodeAccumulator> simulate_segments(
    const SimConfig& cfg, const std::map<PairIndex, SegmentRunner>& runners, bool strict,
    const ProbabilityTable& pr, RunMetrics& metrics) {
  std::map<PairIndex, EpisodeAccumulator> acc;
  for (const auto& [pair, runner] : runners) acc[pair];
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng arng = make_rng(derive_seed(cfg.seed, {stream_tag("activity"), epoch}));
    const auto a = sample_pu_activity(cfg.activity, cfg.topology, arng);
    for (const Segment& seg : partition_segments(a)) {
      if (seg.degenerate()) continue;
      const PairIndex pair{seg.head, seg.end};
      auto it = runners.find(pair);
      if (it == runners.end()) {
        if (!strict || pr(seg.head, seg.end) <= cfg.pr_cutoff) {
          ++metrics.skipped_segments;
          continue;
        }
        throw std::logic_error("no policy for observed segment (" + std::to_string(seg.head) +
                               "," + std::to_string(seg.end) + ")");
      }
      ++metrics.observed_segments;
      Rng rng = make_rng(derive_seed(cfg.seed, {stream_tag("episode"), epoch, seg.head, seg.end}));
      EpisodeChannel channel(seg.hops(), rng);
      for (std::size_t e = 0; e < cfg.episodes_per_epoch; ++e) {
        if (e > 0) channel.redraw(rng);
        const auto out = it->second(channel);
        acc[pair].add(out.time, out.energy);
      }
    }
  }
  for (auto& [pair, a] : acc) {
    if (a.count >= cfg.min_pair_episodes) continue;
    Rng rng = make_rng(derive_seed(cfg.seed, {stream_tag("topup"), pair.head, pair.end}));
    EpisodeChannel channel(pair.end - pair.head, rng);
    const auto& runner = runners.at(pair);
    const std::size_t have = a.count;
    for (std::size_t e = have; e < cfg.min_pair_episodes; ++e) {
      if (e > have) channel.redraw(rng);
      const auto out = runner(channel);
      a.add(out.time, out.energy);
    }
  }
  return acc;
}

inline void finish_metrics(RunMetrics& m, std::size_t last_node, double tie) {
  m.sections.assign(last_node, 0.0);
  std::vector<double> var(last_node, 0.0);
  for (const auto& p : m.pairs) {
    for (std::size_t s = p.pair.head + 1; s <= p.pair.end; ++s) {
      m.sections[s - 1] += p.weight * p.metrics.rate;
      var[s - 1] += p.weight * p.weight * p.metrics.rate_se * p.metrics.rate_se;
    }
    m.total_power += p.weight * p.metrics.power_episode_ratio;
    m.total_power_se += p.weight * p.weight * p.metrics.power_episode_ratio_se *
                        p.metrics.power_episode_ratio_se;
    m.total_power_rom += p.weight * p.metrics.power_ratio_of_means;
  }
  m.total_power_se = std::sqrt(m.total_power_se);
  m.section_se.resize(last_node);
  for (std::size_t s = 0; s < last_node; ++s) m.section_se[s] = std::sqrt(var[s]);
  if (last_node == 0) return;
  const auto it = std::min_element(m.sections.begin(), m.sections.end());
  m.throughput = *it;
  m.throughput_se = m.section_se[static_cast<std::size_t>(it - m.sections.begin())];
  m.end_to_end = m.sections.back();
  m.end_to_end_se = m.section_se.back();
  m.balance_active = m.end_to_end <= m.throughput + tie * std::abs(m.throughput);
}

}  // namespace detail

/// Calibrated lower-bound policies keyed by pair.
using PolicySet = std::map<PairIndex, CalibratedPolicy>;

struct ProposedPlan {
  ProbabilityTable pr;
  MasterSolution master;
  PolicySet policies;
  std::size_t rate_evaluations = 0;
};

/// Solves the master problem and calibrates each pair at its allocation.
inline ProposedPlan plan_proposed(const SimConfig& cfg) {
  cfg.validate();
  ProposedPlan plan;
  plan.pr = cfg.probabilities();
  const auto mp = MasterProblem::make(plan.pr, cfg.p0, cfg.pr_cutoff);
  const CalibratedRateModel model(cfg.topology, cfg.solver, derive_seed(cfg.seed, {stream_tag("rates")}),
                                  cfg.cache_quantum);
  plan.master = solve_master(mp, model, cfg.master);
  for (std::size_t k = 0; k < mp.pairs.size(); ++k) {
    const auto& pair = mp.pairs[k];
    plan.policies.emplace(pair, model.calibrate(pair.head, pair.end,
                                                model.quantize(plan.master.allocation[k])));
  }
  plan.rate_evaluations = model.evaluations();
  return plan;
}

/// Simulates the proposed scheme with given master solution and policies.
inline RunMetrics run_proposed(const SimConfig& cfg, const MasterSolution& master,
                               const PolicySet& policies, const ProbabilityTable& pr) {
  cfg.validate();
  RunMetrics m;
  m.scheme = Scheme::proposed;
  m.p0 = cfg.p0;
  m.epochs = cfg.epochs;
  std::map<PairIndex, SegmentRunner> runners;
  for (const auto& [pair, policy] : policies) {
    const CalibratedPolicy* p = &policy;
    runners.emplace(pair, [p](const EpisodeChannel& ch) {
      const auto rec = run_segment_episode(*p, ch);
      return EpisodeOutcome{rec.total_time, rec.total_energy};
    });
  }
  const auto acc = detail::simulate_segments(cfg, runners, true, pr, m);
  for (std::size_t k = 0; k < master.pairs.size(); ++k) {
    const auto& pair = master.pairs[k];
    if (!policies.count(pair)) {
      throw std::logic_error("no policy for pair (" + std::to_string(pair.head) + "," +
                             std::to_string(pair.end) + ")");
    }
    m.pairs.push_back({pair, pr(pair.head, pair.end), master.allocation[k],
                       policies.at(pair).lambda, SegmentMetrics::from(acc.at(pair))});
  }
  detail::finish_metrics(m, cfg.topology.last_node(), cfg.master.tie_tolerance);
  return m;
}

inline RunMetrics run_proposed(const SimConfig& cfg, const ProposedPlan& plan) {
  return run_proposed(cfg, plan.master, plan.policies, plan.pr);
}

inline RunMetrics run_proposed(const SimConfig& cfg) { return run_proposed(cfg, plan_proposed(cfg)); }

/// Time-share weights of the no-reuse baseline: E[1{(i,j) is a segment} / K]
/// with K the number of transmitting segments in A. Exact enumeration for iid
/// activity on up to 20 nodes, Monte Carlo otherwise.
inline PairTable<double> time_share_weights(const SimConfig& cfg) {
  const std::size_t n = cfg.topology.node_count();
  PairTable<double> w(n, 0.0);
  auto accumulate = [&](const PuActivityState& a, double prob) {
    std::vector<Segment> tx;
    for (const Segment& s : partition_segments(a)) {
      if (!s.degenerate()) tx.push_back(s);
    }
    for (const Segment& s : tx) w(s.head, s.end) += prob / static_cast<double>(tx.size());
  };
  if (cfg.activity.mode == ActivityMode::iid_bernoulli && n <= 20) {
    const double p = cfg.activity.p_avail;
    for (std::uint64_t mask = 0; mask < (1ULL << n); ++mask) {
      const auto a = PuActivityState::from_mask(mask, n);
      double prob = 1.0;
      for (std::size_t k = 0; k < n; ++k) prob *= a.available(k) ? p : 1.0 - p;
      if (prob > 0.0) accumulate(a, prob);
    }
    return w;
  }
  Rng rng = make_rng(derive_seed(cfg.seed, {stream_tag("time-share")}));
  const double inv = 1.0 / static_cast<double>(cfg.pr_samples);
  for (std::size_t k = 0; k < cfg.pr_samples; ++k) {
    accumulate(sample_pu_activity(cfg.activity, cfg.topology, rng), inv);
  }
  return w;
}

/// Constant-power baselines. The power is P0 divided by the total weight, so
/// the long-run average power (linear in the constant) equals P0.
inline RunMetrics run_baseline(Scheme kind, const SimConfig& cfg) {
  cfg.validate();
  if (kind == Scheme::proposed) throw std::domain_error("run_baseline: not a baseline scheme");
  RunMetrics m;
  m.scheme = kind;
  m.p0 = cfg.p0;
  m.epochs = cfg.epochs;
  const ProbabilityTable pr = cfg.probabilities();
  const std::size_t last = cfg.topology.last_node();
  const PairTable<double> share =
      kind == Scheme::baseline2 ? time_share_weights(cfg) : PairTable<double>(last + 1, 0.0);

  std::vector<std::pair<PairIndex, double>> weighted;
  for (std::size_t i = 0; i <= last; ++i) {
    for (std::size_t j = i + 1; j <= last; ++j) {
      if (kind == Scheme::baseline1 && !(i == 0 && j == last)) continue;
      const double w = kind == Scheme::baseline2 ? share(i, j) : pr(i, j);
      if (w > cfg.pr_cutoff) weighted.emplace_back(PairIndex{i, j}, w);
    }
  }
  double weight_sum = 0.0;
  for (const auto& [pair, w] : weighted) weight_sum += w;
  const double power = weight_sum > 0.0 ? cfg.p0 / weight_sum : cfg.p0;
  const bool direct = kind == Scheme::baseline1 || kind == Scheme::baseline3;

  std::map<PairIndex, SegmentRunner> runners;
  const Topology* topo = &cfg.topology;
  for (const auto& [pair, w] : weighted) {
    runners.emplace(pair, [topo, pair, direct, power](const EpisodeChannel& ch) {
      return detail::fixed_route(*topo, pair, direct, power, ch);
    });
  }
  // Baseline 1 only uses (0, M), a segment exactly when every node is
  // available; other segments are idle under that scheme.
  RunMetrics counts;
  const auto acc = detail::simulate_segments(cfg, runners, false, pr, counts);
  m.observed_segments = counts.observed_segments;
  for (const auto& [pair, w] : weighted) {
    m.pairs.push_back({pair, w, power, 0.0, SegmentMetrics::from(acc.at(pair))});
  }
  detail::finish_metrics(m, last, cfg.master.tie_tolerance);
  return m;
}

inline RunMetrics run_scheme(Scheme s, const SimConfig& cfg) {
  return s == Scheme::proposed ? run_proposed(cfg) : run_baseline(s, cfg);
}

/// One grid point of a sweep: its coordinates and the fully resolved config.
struct SweepPoint {
  std::vector<std::pair<std::string, double>> coords;
  SimConfig config;
};

struct SweepRow {
  std::size_t point = 0;
  std::vector<std::pair<std::string, double>> coords;
  std::uint64_t seed = 0;
  RunMetrics metrics;
};

/// Runs every scheme at every point; rows come out point-major in the order
/// of `schemes`. The proposed plan is computed once per point.
inline std::vector<SweepRow> sweep(
    const std::vector<SweepPoint>& points, const std::vector<Scheme>& schemes,
    const std::function<void(const SweepRow&)>& on_row = {}) {
  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < points.size(); ++k) {
    for (Scheme s : schemes) {
      SweepRow row{k, points[k].coords, points[k].config.seed, run_scheme(s, points[k].config)};
      if (on_row) on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace crelay

#endif  // CRELAY_SIM_HPP

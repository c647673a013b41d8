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
 * \file crelay/subpolicy.hpp
 *
 * \brief Per-segment hop selection and power control.
 *
 * Inside one continuous segment R_i..R_j a packet hops strictly forward. At
 * every frame the current holder s sees fresh local CSI (gains to s+1..j),
 * picks the next hop and a transmit power, and spends 1/ln(1+GP) time units
 * per nat. The Lagrangian policy minimizes the expected sum of
 *
 *     g = (1 + lambda (P - pbar)) / ln(1 + G P)
 *
 * by backward recursion over the nodes, and the multiplier lambda is tuned
 * so that the policy's average power meets the segment budget pbar.
 *
 * Rates are in nats per unit time (natural logarithm throughout).
 */

#ifndef CRELAY_SUBPOLICY_HPP
#define CRELAY_SUBPOLICY_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "crelay/model.hpp"
#include "crelay/random.hpp"

namespace crelay {

// ---------------------------------------------------------------------------
// Per-hop reward and cost
// ---------------------------------------------------------------------------

namespace detail {

inline void require_positive(double value, const char* what) {
  if (!std::isfinite(value) || !(value > 0.0)) {
    throw std::domain_error(std::string(what) + " must be positive and finite");
  }
}

}  // namespace detail

/// Time to send one nat over a link with gain G at power P: 1 / ln(1 + G P).
inline double per_hop_time(double gain, double power) {
  detail::require_positive(gain, "per_hop_time: gain");
  detail::require_positive(power, "per_hop_time: power");
  return 1.0 / std::log1p(gain * power);
}

/// Same, but zero when the packet already sits at the segment end node.
inline double per_hop_time(std::size_t source, std::size_t end, double gain, double power) {
  return source >= end ? 0.0 : per_hop_time(gain, power);
}

/// Energy to send one nat: P / ln(1 + G P).
inline double per_hop_cost(double gain, double power) {
  return power * per_hop_time(gain, power);
}

inline double per_hop_cost(std::size_t source, std::size_t end, double gain, double power) {
  return source >= end ? 0.0 : per_hop_cost(gain, power);
}

/// Lagrangian per-hop cost (1 + lambda (P - pbar)) / ln(1 + G P).
inline double g_value(double gain, double power, double lambda, double pbar) {
  if (!(lambda >= 0.0)) throw std::domain_error("g_value: lambda must be >= 0");
  return (1.0 + lambda * (power - pbar)) * per_hop_time(gain, power);
}

// ---------------------------------------------------------------------------
// Optimal power
// ---------------------------------------------------------------------------

struct PowerLimits {
  double floor = 0.0;
  double cap = std::numeric_limits<double>::infinity();
};

namespace detail {

/// (1+x) ln(1+x) - x, accurate near zero.
inline double foc_shape(double x) {
  if (x < 0.05) {
    // sum_{n>=2} (-1)^n x^n / (n (n-1))
    double term = x * x;
    double sum = 0.0;
    for (int n = 2; n < 18; ++n) {
      const double contrib = term / static_cast<double>(n * (n - 1));
      sum += (n % 2 == 0) ? contrib : -contrib;
      term *= x;
    }
    return sum;
  }
  return (1.0 + x) * std::log1p(x) - x;
}

/// Solves foc_shape(x) = target for x in (0, x_hi], given foc_shape(x_hi) >= target.
/// Bracketed bisection with Newton acceleration (foc_shape is increasing and
/// convex, with derivative ln(1+x)).
inline double invert_foc_shape(double target, double x_hi) {
  double lo = 0.0;
  double hi = x_hi;
  // Start from the small- or large-x asymptote, whichever fits.
  double x = target < 1.0 ? std::sqrt(2.0 * target) : target / std::log1p(target);
  if (!(x > lo && x < hi)) x = 0.5 * (lo + hi);
  for (int iter = 0; iter < 200; ++iter) {
    const double f = foc_shape(x) - target;
    if (f == 0.0) return x;
    if (f < 0.0) lo = x; else hi = x;
    const double slope = std::log1p(x);
    double next = slope > 0.0 ? x - f / slope : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-16 * x || hi - lo <= 4e-16 * hi) return next;
    x = next;
  }
  return x;
}

}  // namespace detail

/// Left-hand side of the power first-order condition:
/// G / ((1 + P G) ln(1 + P G) + (pbar - P) G).
/// Strictly decreasing in P, equal to 1/pbar as P -> 0.
inline double power_foc(double gain, double power, double pbar) {
  detail::require_positive(gain, "power_foc: gain");
  detail::require_positive(pbar, "power_foc: pbar");
  if (!(power >= 0.0) || !std::isfinite(power)) {
    throw std::domain_error("power_foc: power must be finite and >= 0");
  }
  return gain / (detail::foc_shape(power * gain) + pbar * gain);
}

/// Power minimizing g for one link: the root of power_foc(G, P, pbar) = lambda,
/// clamped to [limits.floor, limits.cap]. lambda = 0 returns the cap and
/// lambda >= 1/pbar returns the floor.
inline double solve_optimal_power(double gain, double pbar, double lambda,
                                  const PowerLimits& limits) {
  if (!std::isfinite(gain) || !std::isfinite(pbar) || !std::isfinite(lambda) ||
      std::isnan(limits.floor) || std::isnan(limits.cap)) {
    throw std::domain_error("solve_optimal_power: non-finite input");
  }
  detail::require_positive(gain, "solve_optimal_power: gain");
  detail::require_positive(pbar, "solve_optimal_power: pbar");
  if (!(lambda >= 0.0)) throw std::domain_error("solve_optimal_power: lambda must be >= 0");
  if (!(limits.cap > 0.0) || limits.floor > limits.cap) {
    throw std::domain_error("solve_optimal_power: invalid power limits");
  }
  if (lambda == 0.0) return limits.cap;
  if (lambda * pbar >= 1.0) return limits.floor;
  const double target = gain * (1.0 / lambda - pbar);
  if (std::isfinite(limits.cap)) {
    const double x_cap = limits.cap * gain;
    if (detail::foc_shape(x_cap) <= target) return limits.cap;
    const double x = detail::invert_foc_shape(target, x_cap);
    return std::clamp(x / gain, limits.floor, limits.cap);
  }
  double x_hi = std::max(1.0, 2.0 * target);
  while (detail::foc_shape(x_hi) < target) x_hi *= 2.0;
  return std::max(detail::invert_foc_shape(target, x_hi) / gain, limits.floor);
}

// ---------------------------------------------------------------------------
// Segment problem
// ---------------------------------------------------------------------------

/// Which average-power functional the calibration drives to pbar.
enum class PowerMetric {
  /// E[ sum P T / sum T ], the per-episode ratio.
  episode_ratio,
  /// E[ sum P T ] / E[ sum T ].
  ratio_of_means,
};

inline std::string to_string(PowerMetric m) {
  return m == PowerMetric::episode_ratio ? "episode_ratio" : "ratio_of_means";
}

struct SolverOptions {
  /// Fading draws per node in the recursion, and calibration episodes.
  std::size_t mc_samples = 2000;
  /// Relative tolerance on the achieved average power.
  double power_tolerance = 1e-2;
  /// p_max = cap_ratio * pbar.
  double cap_ratio = 100.0;
  /// p_floor = floor_ratio * pbar.
  double floor_ratio = 1e-6;
  std::size_t max_calibration_iterations = 100;
  PowerMetric power_metric = PowerMetric::episode_ratio;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One continuous segment's dynamic program instance.
struct SegmentProblem {
  Segment segment;
  /// Path loss D(s, m) for head <= s < m <= end, indexed relative to head.
  PairTable<double> pathloss;
  double pbar = 1.0;
  PowerLimits limits;
  std::size_t mc_samples = 2000;
  /// Packet size in nats; cancels from rates, kept for per-packet times.
  double packet_bits = 1.0;
  std::uint64_t seed = 0;

  static SegmentProblem make(const Topology& topology, Segment segment, double pbar,
                             const SolverOptions& options, std::uint64_t seed) {
    if (!(segment.head < segment.end) || segment.end > topology.last_node()) {
      throw std::invalid_argument("SegmentProblem: need head < end <= M");
    }
    detail::require_positive(pbar, "SegmentProblem: pbar");
    if (options.mc_samples < 1) throw std::invalid_argument("SegmentProblem: mc_samples >= 1");
    SegmentProblem p;
    p.segment = segment;
    const std::size_t n = segment.hops() + 1;
    p.pathloss = PairTable<double>(n, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        p.pathloss(a, b) = topology.pathloss(segment.head + a, segment.head + b);
      }
    }
    p.pbar = pbar;
    p.limits = {options.floor_ratio * pbar, options.cap_ratio * pbar};
    p.mc_samples = options.mc_samples;
    p.seed = seed;
    return p;
  }

  std::size_t head() const noexcept { return segment.head; }
  std::size_t end() const noexcept { return segment.end; }
  std::size_t hops() const noexcept { return segment.hops(); }

  /// Mean gain of the link s -> m, absolute node indices.
  double mean_gain(std::size_t s, std::size_t m) const {
    return pathloss(s - segment.head, m - segment.head);
  }

  /// FNV-1a over every field that influences the solution.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* data, std::size_t size) {
      const auto* bytes = static_cast<const unsigned char*>(data);
      for (std::size_t k = 0; k < size; ++k) {
        h ^= bytes[k];
        h *= 0x100000001b3ULL;
      }
    };
    auto feed_u64 = [&](std::uint64_t v) { feed(&v, sizeof v); };
    auto feed_f64 = [&](double v) { feed(&v, sizeof v); };
    feed_u64(segment.head);
    feed_u64(segment.end);
    for (std::size_t a = 0; a <= hops(); ++a) {
      for (std::size_t b = a + 1; b <= hops(); ++b) feed_f64(pathloss(a, b));
    }
    feed_f64(pbar);
    feed_f64(limits.floor);
    feed_f64(limits.cap);
    feed_u64(mc_samples);
    feed_f64(packet_bits);
    feed_u64(seed);
    return h;
  }
};

/// Expected cost-to-go J(s), s = head..end, lambda-adjusted time per nat.
struct ValueTable {
  std::size_t head = 0;
  std::vector<double> values;

  std::size_t end() const noexcept { return head + values.size() - 1; }
  double operator()(std::size_t s) const { return values.at(s - head); }
};

// ---------------------------------------------------------------------------
// Action selection
// ---------------------------------------------------------------------------

/// Continuous power: the first-order-condition root per link.
struct ContinuousPower {
  PowerLimits limits;

  struct Choice {
    double power;
    double cost;
  };
  Choice best(double gain, double lambda, double pbar) const {
    const double p = solve_optimal_power(gain, pbar, lambda, limits);
    return {p, (1.0 + lambda * (p - pbar)) / std::log1p(gain * p)};
  }
};

/// Discrete power: the level with the smallest g (lowest level on ties).
struct GridPower {
  std::vector<double> levels;

  struct Choice {
    double power;
    double cost;
    std::size_t level;
  };
  Choice best(double gain, double lambda, double pbar) const {
    Choice out{0.0, std::numeric_limits<double>::infinity(), 0};
    for (std::size_t k = 0; k < levels.size(); ++k) {
      const double c = (1.0 + lambda * (levels[k] - pbar)) / std::log1p(gain * levels[k]);
      if (c < out.cost) out = {levels[k], c, k};
    }
    return out;
  }
};

struct Decision {
  std::size_t next = 0;
  double power = 0.0;
  /// g + J(next) of the chosen action.
  double score = 0.0;
  /// Candidates examined.
  std::size_t evaluations = 0;
};

/// argmin over m in (source, end] of g(G_sm, P*_sm) + J(m); ties go to the
/// smallest m. gains[k] is the link gain to source + 1 + k.
template <class PowerRule>
Decision decide(std::size_t source, std::span<const double> gains, const ValueTable& table,
                double lambda, double pbar, const PowerRule& rule) {
  Decision d;
  d.score = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < gains.size(); ++k) {
    const std::size_t m = source + 1 + k;
    const auto choice = rule.best(gains[k], lambda, pbar);
    const double score = choice.cost + table(m);
    ++d.evaluations;
    if (score < d.score) {
      d.score = score;
      d.next = m;
      d.power = choice.power;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Fading samples (common random numbers)
// ---------------------------------------------------------------------------

/// |H|^2 draws for the recursion: for each source s, `samples` rows of the
/// (end - s) fading values to its downstream nodes.
class RecursionSamples {
 public:
  RecursionSamples(std::size_t hops, std::size_t samples, Rng& rng)
      : hops_(hops), samples_(samples), rows_(hops) {
    for (std::size_t r = hops; r-- > 0;) {
      const std::size_t width = hops - r;
      rows_[r].resize(samples * width);
      for (double& v : rows_[r]) v = unit_exponential(rng);
    }
  }

  /// Every fading value set to `value`: deterministic gains equal to the
  /// path loss scaled by `value`.
  static RecursionSamples constant(std::size_t hops, double value = 1.0) {
    RecursionSamples out;
    out.hops_ = hops;
    out.samples_ = 1;
    out.rows_.resize(hops);
    for (std::size_t r = 0; r < hops; ++r) out.rows_[r].assign(hops - r, value);
    return out;
  }

  std::size_t samples() const noexcept { return samples_; }
  /// Fading to the (hops - rel) downstream nodes of relative source `rel`.
  std::span<const double> row(std::size_t rel, std::size_t sample) const {
    const std::size_t width = hops_ - rel;
    return std::span<const double>(rows_[rel]).subspan(sample * width, width);
  }

 private:
  RecursionSamples() = default;

  std::size_t hops_ = 0;
  std::size_t samples_ = 0;
  std::vector<std::vector<double>> rows_;
};

/// One episode's channel: an independent fading row for every node the
/// packet might occupy. The holder at s only reads row s, drawn independently
/// of everything it has seen, so this is the causal local-CSI model with the
/// draws laid out in a fixed order.
class EpisodeChannel {
 public:
  EpisodeChannel() = default;
  EpisodeChannel(std::size_t hops, Rng& rng) : hops_(hops) { redraw(rng); }

  /// Every fading value set to `value`.
  static EpisodeChannel constant(std::size_t hops, double value = 1.0) {
    EpisodeChannel out;
    out.hops_ = hops;
    out.layout();
    out.fading_.assign(out.offsets_[hops], value);
    return out;
  }

  void redraw(Rng& rng) {
    layout();
    fading_.resize(offsets_[hops_]);
    for (double& v : fading_) v = unit_exponential(rng);
  }

  std::span<const double> row(std::size_t rel) const {
    return std::span<const double>(fading_).subspan(offsets_[rel], hops_ - rel);
  }

 private:
  void layout() {
    offsets_.assign(hops_ + 1, 0);
    for (std::size_t r = 0; r < hops_; ++r) offsets_[r + 1] = offsets_[r] + (hops_ - r);
  }

  std::size_t hops_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<double> fading_;
};

// ---------------------------------------------------------------------------
// Offline recursion
// ---------------------------------------------------------------------------

namespace detail {

inline void row_gains(const SegmentProblem& problem, std::size_t rel,
                      std::span<const double> fading, std::vector<double>& out) {
  out.resize(fading.size());
  for (std::size_t k = 0; k < fading.size(); ++k) {
    out[k] = fading[k] * problem.pathloss(rel, rel + 1 + k);
  }
}

}  // namespace detail

/// Backward recursion J(end) = 0, J(s) = mean over samples of
/// min_m [g(G_sm, P*_sm) + J(m)], with P* solved per candidate link.
inline ValueTable offline_recursion(const SegmentProblem& problem, double lambda,
                                    const RecursionSamples& samples) {
  const std::size_t hops = problem.hops();
  ValueTable table{problem.head(), std::vector<double>(hops + 1, 0.0)};
  const ContinuousPower rule{problem.limits};
  std::vector<double> gains;
  for (std::size_t rel = hops; rel-- > 0;) {
    double sum = 0.0;
    for (std::size_t n = 0; n < samples.samples(); ++n) {
      detail::row_gains(problem, rel, samples.row(rel, n), gains);
      sum += decide(problem.head() + rel, gains, table, lambda, problem.pbar, rule).score;
    }
    table.values[rel] = sum / static_cast<double>(samples.samples());
  }
  return table;
}

inline ValueTable offline_recursion(const SegmentProblem& problem, double lambda, Rng& rng) {
  const RecursionSamples samples(problem.hops(), problem.mc_samples, rng);
  return offline_recursion(problem, lambda, samples);
}

// ---------------------------------------------------------------------------
// Calibrated policy, online step, episodes
// ---------------------------------------------------------------------------

struct CalibrationReport {
  /// E[sum PT / sum T] over the calibration episodes.
  double power_episode_ratio = 0.0;
  /// E[sum PT] / E[sum T] over the calibration episodes.
  double power_ratio_of_means = 0.0;
  /// The functional that was driven to pbar.
  PowerMetric metric = PowerMetric::episode_ratio;
  /// Mean of 1 / sum T over the calibration episodes, and its standard error.
  double rate = 0.0;
  double rate_se = 0.0;
  /// Mean of sum T.
  double mean_time = 0.0;
  std::size_t iterations = 0;
  bool budget_slack = false;

  double achieved_power() const {
    return metric == PowerMetric::episode_ratio ? power_episode_ratio : power_ratio_of_means;
  }
};

struct CalibratedPolicy {
  SegmentProblem problem;
  double lambda = 0.0;
  ValueTable table;
  CalibrationReport report;
};

/// Next hop and power for the packet at `source` given its local gains
/// (gains[k] to source + 1 + k).
inline Decision online_step(std::size_t source, std::span<const double> gains,
                            const CalibratedPolicy& policy) {
  const auto& p = policy.problem;
  if (source < p.head() || source >= p.end()) {
    throw std::logic_error("online_step: packet is not upstream of the segment end");
  }
  if (gains.size() != p.end() - source) {
    throw std::logic_error("online_step: local CSI must cover every downstream node");
  }
  return decide(source, gains, policy.table, policy.lambda, p.pbar, ContinuousPower{p.limits});
}

struct EpisodeRecord {
  /// Nodes visited, head first, end last.
  std::vector<std::size_t> hops;
  /// Per-frame time per nat and energy per nat.
  std::vector<double> times;
  std::vector<double> energies;
  double total_time = 0.0;
  double total_energy = 0.0;
  /// Candidate evaluations per frame.
  std::vector<std::size_t> evaluations;
};

/// Runs one packet through the segment over a given channel realization.
inline EpisodeRecord run_segment_episode(const CalibratedPolicy& policy,
                                         const EpisodeChannel& channel) {
  const auto& p = policy.problem;
  EpisodeRecord rec;
  rec.hops.push_back(p.head());
  std::vector<double> gains;
  std::size_t s = p.head();
  while (s < p.end()) {
    const std::size_t rel = s - p.head();
    detail::row_gains(p, rel, channel.row(rel), gains);
    const Decision d = online_step(s, gains, policy);
    const double t = 1.0 / std::log1p(gains[d.next - s - 1] * d.power);
    rec.times.push_back(t);
    rec.energies.push_back(d.power * t);
    rec.evaluations.push_back(d.evaluations);
    rec.total_time += t;
    rec.total_energy += d.power * t;
    rec.hops.push_back(d.next);
    s = d.next;
  }
  return rec;
}

/// Runs one packet with fresh local CSI drawn from `rng` at every frame.
inline EpisodeRecord run_segment_episode(const CalibratedPolicy& policy, Rng& rng) {
  const EpisodeChannel channel(policy.problem.hops(), rng);
  return run_segment_episode(policy, channel);
}

/// Summary statistics of independent segment episodes.
struct EpisodeAccumulator {
  std::size_t count = 0;
  double sum_rate = 0.0, sum_rate_sq = 0.0;
  double sum_ratio = 0.0, sum_ratio_sq = 0.0;
  double sum_time = 0.0, sum_time_sq = 0.0;
  double sum_energy = 0.0;
  double sum_time_energy = 0.0, sum_energy_sq = 0.0;

  void add(double total_time, double total_energy) {
    const double rate = 1.0 / total_time;
    const double ratio = total_energy / total_time;
    ++count;
    sum_rate += rate;
    sum_rate_sq += rate * rate;
    sum_ratio += ratio;
    sum_ratio_sq += ratio * ratio;
    sum_time += total_time;
    sum_time_sq += total_time * total_time;
    sum_energy += total_energy;
    sum_time_energy += total_time * total_energy;
    sum_energy_sq += total_energy * total_energy;
  }

  void merge(const EpisodeAccumulator& o) {
    count += o.count;
    sum_rate += o.sum_rate;
    sum_rate_sq += o.sum_rate_sq;
    sum_ratio += o.sum_ratio;
    sum_ratio_sq += o.sum_ratio_sq;
    sum_time += o.sum_time;
    sum_time_sq += o.sum_time_sq;
    sum_energy += o.sum_energy;
    sum_time_energy += o.sum_time_energy;
    sum_energy_sq += o.sum_energy_sq;
  }

  static double mean(double sum, std::size_t n) { return n ? sum / static_cast<double>(n) : 0.0; }
  static double std_error(double sum, double sum_sq, std::size_t n) {
    if (n < 2) return 0.0;
    const double nd = static_cast<double>(n);
    const double m = sum / nd;
    const double var = std::max(0.0, (sum_sq - nd * m * m) / (nd - 1.0));
    return std::sqrt(var / nd);
  }

  double rate() const { return mean(sum_rate, count); }
  double rate_se() const { return std_error(sum_rate, sum_rate_sq, count); }
  double power_episode_ratio() const { return mean(sum_ratio, count); }
  double power_episode_ratio_se() const { return std_error(sum_ratio, sum_ratio_sq, count); }
  double mean_time() const { return mean(sum_time, count); }
  double time_se() const { return std_error(sum_time, sum_time_sq, count); }
  double power_ratio_of_means() const { return sum_time > 0.0 ? sum_energy / sum_time : 0.0; }
  /// Delta-method standard error of sum E / sum T.
  double power_ratio_of_means_se() const {
    if (count < 2 || sum_time <= 0.0) return 0.0;
    const double n = static_cast<double>(count);
    const double mt = sum_time / n, me = sum_energy / n, r = me / mt;
    const double var_t = (sum_time_sq - n * mt * mt) / (n - 1.0);
    const double var_e = (sum_energy_sq - n * me * me) / (n - 1.0);
    const double cov = (sum_time_energy - n * mt * me) / (n - 1.0);
    const double var = std::max(0.0, (var_e - 2.0 * r * cov + r * r * var_t) / (mt * mt));
    return std::sqrt(var / n);
  }
};

struct SegmentMetrics {
  /// E[1 / sum T] in nats per unit time.
  double rate = 0.0;
  double rate_se = 0.0;
  /// E[sum PT] / E[sum T].
  double power_ratio_of_means = 0.0;
  double power_ratio_of_means_se = 0.0;
  /// E[sum PT / sum T].
  double power_episode_ratio = 0.0;
  double power_episode_ratio_se = 0.0;
  double mean_time = 0.0;
  double mean_time_se = 0.0;
  std::size_t episodes = 0;

  static SegmentMetrics from(const EpisodeAccumulator& acc) {
    return {acc.rate(),
            acc.rate_se(),
            acc.power_ratio_of_means(),
            acc.power_ratio_of_means_se(),
            acc.power_episode_ratio(),
            acc.power_episode_ratio_se(),
            acc.mean_time(),
            acc.time_se(),
            acc.count};
  }
};

/// Monte-Carlo rate and power of a calibrated policy over `episodes` packets.
inline SegmentMetrics estimate_segment_metrics(const CalibratedPolicy& policy,
                                               std::size_t episodes, Rng& rng) {
  if (episodes < 1) throw std::invalid_argument("estimate_segment_metrics: episodes >= 1");
  EpisodeAccumulator acc;
  EpisodeChannel channel(policy.problem.hops(), rng);
  for (std::size_t e = 0; e < episodes; ++e) {
    if (e > 0) channel.redraw(rng);
    const auto rec = run_segment_episode(policy, channel);
    acc.add(rec.total_time, rec.total_energy);
  }
  return SegmentMetrics::from(acc);
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

namespace detail {

/// Fixed draws reused for every multiplier tried during one calibration.
struct CalibrationDraws {
  RecursionSamples recursion;
  std::vector<EpisodeChannel> episodes;

  explicit CalibrationDraws(const SegmentProblem& p)
      : recursion([&] {
          Rng rng = make_rng(derive_seed(p.seed, {stream_tag("recursion")}));
          return RecursionSamples(p.hops(), p.mc_samples, rng);
        }()) {
    Rng rng = make_rng(derive_seed(p.seed, {stream_tag("calibration-episodes")}));
    episodes.reserve(p.mc_samples);
    for (std::size_t e = 0; e < p.mc_samples; ++e) episodes.emplace_back(p.hops(), rng);
  }
};

inline CalibratedPolicy evaluate_multiplier(const SegmentProblem& problem, double lambda,
                                            const CalibrationDraws& draws, PowerMetric metric) {
  CalibratedPolicy policy{problem, lambda, offline_recursion(problem, lambda, draws.recursion), {}};
  EpisodeAccumulator acc;
  for (const auto& channel : draws.episodes) {
    const auto rec = run_segment_episode(policy, channel);
    acc.add(rec.total_time, rec.total_energy);
  }
  policy.report.power_episode_ratio = acc.power_episode_ratio();
  policy.report.power_ratio_of_means = acc.power_ratio_of_means();
  policy.report.metric = metric;
  policy.report.rate = acc.rate();
  policy.report.rate_se = acc.rate_se();
  policy.report.mean_time = acc.mean_time();
  return policy;
}

}  // namespace detail

/// Finds lambda >= 0 whose policy spends pbar on average (within the relative
/// tolerance), or lambda = 0 when the uncapped-price policy already fits the
/// budget. The search runs over kappa = 1/lambda - pbar in (0, inf), where the
/// achieved power is non-decreasing, by geometric bisection. Recursion and
/// evaluation draws are fixed for the whole search.
inline CalibratedPolicy calibrate_lambda(const SegmentProblem& problem,
                                         const SolverOptions& options = {}) {
  const detail::CalibrationDraws draws(problem);
  const double pbar = problem.pbar;
  const double tol = options.power_tolerance;
  const PowerMetric metric = options.power_metric;
  std::size_t iterations = 0;
  auto eval = [&](double lambda) {
    ++iterations;
    return detail::evaluate_multiplier(problem, lambda, draws, metric);
  };
  auto finish = [&](CalibratedPolicy p, bool slack) {
    p.report.iterations = iterations;
    p.report.budget_slack = slack;
    return p;
  };
  auto lambda_of = [pbar](double kappa) { return 1.0 / (pbar + kappa); };

  CalibratedPolicy free_policy = eval(0.0);
  if (free_policy.report.achieved_power() <= pbar * (1.0 + tol)) {
    return finish(std::move(free_policy), true);
  }

  // Bracket: power(kappa_lo) < pbar < power(kappa_hi).
  double kappa = pbar;
  CalibratedPolicy at = eval(lambda_of(kappa));
  if (std::abs(at.report.achieved_power() - pbar) <= tol * pbar) return finish(std::move(at), false);
  double kappa_lo = 0.0, kappa_hi = 0.0;
  CalibratedPolicy lo_policy;
  if (at.report.achieved_power() < pbar) {
    kappa_lo = kappa;
    lo_policy = std::move(at);
    kappa_hi = kappa;
    for (;;) {
      kappa_hi *= 8.0;
      if (kappa_hi > pbar * 1e15 || iterations > options.max_calibration_iterations) {
        std::ostringstream msg;
        msg << "calibrate_lambda: no multiplier overspends the budget for segment ("
            << problem.head() << "," << problem.end() << "), pbar=" << pbar
            << ", power at lambda=0 is " << free_policy.report.achieved_power();
        throw CalibrationError(msg.str());
      }
      CalibratedPolicy hi = eval(lambda_of(kappa_hi));
      const double ph = hi.report.achieved_power();
      if (std::abs(ph - pbar) <= tol * pbar) return finish(std::move(hi), false);
      if (ph > pbar) break;
      kappa_lo = kappa_hi;
      lo_policy = std::move(hi);
    }
  } else {
    kappa_hi = kappa;
    kappa_lo = kappa;
    for (;;) {
      kappa_lo /= 8.0;
      if (kappa_lo < pbar * 1e-15 || iterations > options.max_calibration_iterations) {
        std::ostringstream msg;
        msg << "calibrate_lambda: no multiplier meets the budget for segment ("
            << problem.head() << "," << problem.end() << "), pbar=" << pbar;
        throw CalibrationError(msg.str());
      }
      CalibratedPolicy lo = eval(lambda_of(kappa_lo));
      const double pl = lo.report.achieved_power();
      if (std::abs(pl - pbar) <= tol * pbar) return finish(std::move(lo), false);
      if (pl < pbar) {
        lo_policy = std::move(lo);
        break;
      }
      kappa_hi = kappa_lo;
    }
  }

  while (iterations < options.max_calibration_iterations && kappa_hi / kappa_lo > 1.0 + 1e-13) {
    const double mid = std::sqrt(kappa_lo * kappa_hi);
    CalibratedPolicy p = eval(lambda_of(mid));
    const double pm = p.report.achieved_power();
    if (std::abs(pm - pbar) <= tol * pbar) return finish(std::move(p), false);
    if (pm < pbar) {
      kappa_lo = mid;
      lo_policy = std::move(p);
    } else {
      kappa_hi = mid;
    }
  }
  // The achieved power jumps across pbar (finite sample set); keep the side
  // that respects the budget.
  return finish(std::move(lo_policy), false);
}

}  // namespace crelay

#endif  // CRELAY_SUBPOLICY_HPP

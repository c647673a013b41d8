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
 * \file crelay/model.hpp
 *
 * \brief Route geometry, path loss, Rayleigh fading and primary-user
 *  activity for a cognitive multi-hop relay chain.
 *
 * Nodes are indexed 0..M along the route (0 is the source, M the
 * destination). Distances are unitless and powers are SNR-normalized
 * (unit noise variance), so a link gain G multiplies a transmit power to
 * give the received SNR directly.
 */

#ifndef CRELAY_MODEL_HPP
#define CRELAY_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "crelay/random.hpp"

namespace crelay {

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double linear) { return 10.0 * std::log10(linear); }

/// Large-scale gain of the flat-earth model, d^(-alpha).
inline double path_loss(double distance, double alpha) {
  if (!(distance > 0.0) || !std::isfinite(distance)) {
    throw std::domain_error("path_loss: distance must be positive and finite");
  }
  if (!(alpha >= 0.0)) {
    throw std::domain_error("path_loss: exponent must be non-negative");
  }
  return std::pow(distance, -alpha);
}

/// Smallest PU exclusion radius meeting a mean interference limit:
/// (P0 / P_int)^(1/alpha).
inline double min_safe_distance(double mean_power, double interference_limit,
                                double alpha) {
  if (!(mean_power > 0.0) || !(interference_limit > 0.0) || !(alpha > 0.0)) {
    throw std::domain_error("min_safe_distance: arguments must be positive");
  }
  return std::pow(mean_power / interference_limit, 1.0 / alpha);
}

/// Dense (n x n) table indexed by node pairs. Only i <= j entries carry
/// meaning for segment quantities.
template <class T>
class PairTable {
 public:
  PairTable() = default;
  explicit PairTable(std::size_t nodes, T fill = T{})
      : nodes_(nodes), data_(nodes * nodes, fill) {}

  std::size_t node_count() const noexcept { return nodes_; }
  std::size_t last_node() const noexcept { return nodes_ - 1; }

  T& operator()(std::size_t i, std::size_t j) { return data_.at(i * nodes_ + j); }
  const T& operator()(std::size_t i, std::size_t j) const {
    return data_.at(i * nodes_ + j);
  }

  friend bool operator==(const PairTable&, const PairTable&) = default;

 private:
  std::size_t nodes_ = 0;
  std::vector<T> data_;
};

/// Ordered nodes on a line with their pairwise path-loss matrix.
class Topology {
 public:
  Topology(std::vector<double> positions, double alpha)
      : positions_(std::move(positions)), alpha_(alpha) {
    if (positions_.size() < 2) {
      throw std::invalid_argument("Topology: need at least a source and a destination");
    }
    for (std::size_t k = 1; k < positions_.size(); ++k) {
      if (!(positions_[k] > positions_[k - 1])) {
        throw std::invalid_argument("Topology: positions must be strictly increasing");
      }
    }
    if (!(alpha_ >= 0.0)) throw std::invalid_argument("Topology: alpha must be >= 0");
    const std::size_t n = positions_.size();
    pathloss_ = PairTable<double>(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) pathloss_(i, j) = path_loss(distance(i, j), alpha_);
      }
    }
  }

  /// `nodes` nodes evenly spread over [0, span].
  static Topology evenly_spaced(std::size_t nodes, double span, double alpha) {
    if (nodes < 2) throw std::invalid_argument("Topology: need at least two nodes");
    std::vector<double> pos(nodes);
    for (std::size_t k = 0; k < nodes; ++k) {
      pos[k] = span * static_cast<double>(k) / static_cast<double>(nodes - 1);
    }
    return Topology(std::move(pos), alpha);
  }

  /// Source at 0, destination at `span`, the interior relays uniformly
  /// scattered between them (sorted). Deterministic in `seed`.
  static Topology random_interior(std::size_t nodes, double span, double alpha,
                                  std::uint64_t seed) {
    if (nodes < 2) throw std::invalid_argument("Topology: need at least two nodes");
    Rng rng = make_rng(derive_seed(seed, {stream_tag("topology")}));
    std::vector<double> pos{0.0};
    std::vector<double> interior;
    while (interior.size() < nodes - 2) {
      const double x = span * uniform01(rng);
      // Reject coincident or endpoint draws so positions stay strictly ordered.
      const bool clash = x <= 0.0 || x >= span ||
                         std::any_of(interior.begin(), interior.end(),
                                     [x](double y) { return y == x; });
      if (!clash) interior.push_back(x);
    }
    std::sort(interior.begin(), interior.end());
    pos.insert(pos.end(), interior.begin(), interior.end());
    pos.push_back(span);
    return Topology(std::move(pos), alpha);
  }

  std::size_t node_count() const noexcept { return positions_.size(); }
  std::size_t last_node() const noexcept { return positions_.size() - 1; }
  double alpha() const noexcept { return alpha_; }
  const std::vector<double>& positions() const noexcept { return positions_; }
  double position(std::size_t m) const { return positions_.at(m); }

  double distance(std::size_t i, std::size_t j) const {
    return std::abs(positions_.at(i) - positions_.at(j));
  }

  /// D_ij for i != j.
  double pathloss(std::size_t i, std::size_t j) const {
    if (i == j) throw std::domain_error("Topology::pathloss: i == j");
    return pathloss_(i, j);
  }

  /// Gain ordering of a path-loss dominated chain: D_st >= D_st' and
  /// D_st >= D_s't whenever t' >= t > s >= s'.
  bool monotone_gain() const {
    const std::size_t last = last_node();
    for (std::size_t s = 0; s < last; ++s) {
      for (std::size_t t = s + 1; t <= last; ++t) {
        if (t < last && pathloss_(s, t) < pathloss_(s, t + 1)) return false;
        if (s > 0 && pathloss_(s, t) < pathloss_(s - 1, t)) return false;
      }
    }
    return true;
  }

 private:
  std::vector<double> positions_;
  double alpha_;
  PairTable<double> pathloss_;
};

enum class ActivityMode { iid_bernoulli, spatial_field };

inline std::string to_string(ActivityMode mode) {
  return mode == ActivityMode::iid_bernoulli ? "iid" : "spatial";
}

/// Generative model of the PU availability vector A.
struct PuActivityModel {
  ActivityMode mode = ActivityMode::iid_bernoulli;
  /// Pr(A_m = 1), iid mode.
  double p_avail = 1.0;
  /// PU density per unit length (per unit area when strip_width > 0).
  double pu_density = 1.0;
  /// Probability that a PU is active.
  double pu_active_prob = 0.0;
  /// Exclusion radius D0: node m has access iff no active PU is closer.
  double exclusion_radius = 1.0;
  /// Width of the PU strip centred on the route; 0 places PUs on the line.
  double strip_width = 0.0;
  /// Frames over which A stays quasi-static.
  std::size_t epoch_frames = 1;

  static PuActivityModel iid(double p_avail) {
    PuActivityModel m;
    m.p_avail = p_avail;
    m.validate();
    return m;
  }

  static PuActivityModel spatial(double density, double active_prob,
                                 double exclusion_radius, double strip_width = 0.0) {
    PuActivityModel m;
    m.mode = ActivityMode::spatial_field;
    m.pu_density = density;
    m.pu_active_prob = active_prob;
    m.exclusion_radius = exclusion_radius;
    m.strip_width = strip_width;
    m.validate();
    return m;
  }

  void validate() const {
    if (!(p_avail >= 0.0 && p_avail <= 1.0)) {
      throw std::invalid_argument("PuActivityModel: p_avail must be in [0,1]");
    }
    if (!(pu_active_prob >= 0.0 && pu_active_prob <= 1.0)) {
      throw std::invalid_argument("PuActivityModel: PU active probability must be in [0,1]");
    }
    if (mode == ActivityMode::spatial_field) {
      if (!(pu_density > 0.0)) throw std::invalid_argument("PuActivityModel: density must be > 0");
      if (!(exclusion_radius > 0.0)) throw std::invalid_argument("PuActivityModel: D0 must be > 0");
      if (!(strip_width >= 0.0)) throw std::invalid_argument("PuActivityModel: strip width must be >= 0");
    }
    if (epoch_frames < 1) throw std::invalid_argument("PuActivityModel: epoch_frames must be >= 1");
  }
};

/// Availability bits A_0..A_M. The virtual boundary bits S_{-1} = S_{M+1} = 0
/// are implied, never stored.
class PuActivityState {
 public:
  PuActivityState() = default;
  explicit PuActivityState(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (auto& b : bits_) b = b != 0;
  }
  PuActivityState(std::initializer_list<int> bits) {
    bits_.reserve(bits.size());
    for (int b : bits) bits_.push_back(b != 0);
  }

  /// Bits of `mask`, lowest bit is node 0.
  static PuActivityState from_mask(std::uint64_t mask, std::size_t nodes) {
    std::vector<std::uint8_t> bits(nodes);
    for (std::size_t m = 0; m < nodes; ++m) bits[m] = (mask >> m) & 1U;
    return PuActivityState(std::move(bits));
  }

  std::size_t size() const noexcept { return bits_.size(); }
  bool available(std::size_t m) const { return bits_.at(m) != 0; }
  /// A with the boundary convention: indices outside 0..M read as 0.
  bool available_or_boundary(std::ptrdiff_t m) const {
    return m >= 0 && static_cast<std::size_t>(m) < bits_.size() &&
           bits_[static_cast<std::size_t>(m)] != 0;
  }
  bool all_available() const {
    return std::all_of(bits_.begin(), bits_.end(), [](auto b) { return b != 0; });
  }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

  friend bool operator==(const PuActivityState&, const PuActivityState&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// A continuous segment R_head..R_end. head == end is a degenerate isolated
/// node that carries no traffic.
struct Segment {
  std::size_t head = 0;
  std::size_t end = 0;

  std::size_t hops() const noexcept { return end - head; }
  bool degenerate() const noexcept { return head == end; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Maximal runs of consecutive available nodes, in route order.
inline std::vector<Segment> partition_segments(const PuActivityState& state) {
  std::vector<Segment> out;
  const std::size_t n = state.size();
  std::size_t m = 0;
  while (m < n) {
    if (!state.available(m)) {
      ++m;
      continue;
    }
    const std::size_t head = m;
    while (m + 1 < n && state.available(m + 1)) ++m;
    out.push_back({head, m});
    ++m;
  }
  return out;
}

namespace detail {

/// Active PU positions (x, y) for one draw of the spatial field over the
/// padded coverage interval.
inline std::vector<std::pair<double, double>> sample_active_pus(
    const PuActivityModel& model, const Topology& topology, Rng& rng) {
  const double lo = topology.positions().front() - model.exclusion_radius;
  const double hi = topology.positions().back() + model.exclusion_radius;
  const double width = model.strip_width;
  const double linear_rate = width > 0.0 ? model.pu_density * width : model.pu_density;
  const double active_rate = linear_rate * model.pu_active_prob;
  std::vector<std::pair<double, double>> pus;
  if (!(active_rate > 0.0)) return pus;
  // Independent thinning of a Poisson field is a Poisson field of rate
  // density * P_a; generate it by exponential spacings along x.
  double x = lo;
  while (true) {
    x += unit_exponential(rng) / active_rate;
    if (x >= hi) break;
    const double y = width > 0.0 ? (uniform01(rng) - 0.5) * width : 0.0;
    pus.emplace_back(x, y);
  }
  return pus;
}

}  // namespace detail

/// One draw of the availability vector A.
inline PuActivityState sample_pu_activity(const PuActivityModel& model,
                                          const Topology& topology, Rng& rng) {
  const std::size_t n = topology.node_count();
  std::vector<std::uint8_t> bits(n, 0);
  if (model.mode == ActivityMode::iid_bernoulli) {
    for (auto& b : bits) b = bernoulli(rng, model.p_avail);
    return PuActivityState(std::move(bits));
  }
  const auto pus = detail::sample_active_pus(model, topology, rng);
  const double r2 = model.exclusion_radius * model.exclusion_radius;
  for (std::size_t m = 0; m < n; ++m) {
    const double xm = topology.position(m);
    bool blocked = false;
    for (const auto& [x, y] : pus) {
      const double dx = x - xm;
      if (dx * dx + y * y < r2) {
        blocked = true;
        break;
      }
    }
    bits[m] = !blocked;
  }
  return PuActivityState(std::move(bits));
}

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Closed-form Pr(i, j) for iid availability with probability p over nodes
/// 0..last: p^(j-i+1) times (1-p) for each real neighbour that must be off.
inline double iid_segment_probability(std::size_t i, std::size_t j, double p,
                                      std::size_t last) {
  if (i > j || j > last) throw std::domain_error("segment_probability: need 0 <= i <= j <= M");
  const int boundary = (i > 0 ? 1 : 0) + (j < last ? 1 : 0);
  return std::pow(p, static_cast<double>(j - i + 1)) * std::pow(1.0 - p, boundary);
}

/// Pr(i, j) for every 0 <= i <= j <= M, with standard errors (zero for the
/// closed form).
class ProbabilityTable {
 public:
  ProbabilityTable() = default;
  explicit ProbabilityTable(std::size_t nodes)
      : value_(nodes, 0.0), std_error_(nodes, 0.0) {}

  static ProbabilityTable from_model(const PuActivityModel& model, const Topology& topology,
                                     std::size_t samples = 200000, std::uint64_t seed = 1) {
    model.validate();
    const std::size_t n = topology.node_count();
    ProbabilityTable table(n);
    if (model.mode == ActivityMode::iid_bernoulli) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
          table.value_(i, j) = iid_segment_probability(i, j, model.p_avail, n - 1);
        }
      }
      return table;
    }
    if (samples == 0) throw std::invalid_argument("ProbabilityTable: need samples > 0");
    PairTable<double> counts(n, 0.0);
    Rng rng = make_rng(derive_seed(seed, {stream_tag("segment-probability")}));
    for (std::size_t s = 0; s < samples; ++s) {
      for (const Segment& seg : partition_segments(sample_pu_activity(model, topology, rng))) {
        counts(seg.head, seg.end) += 1.0;
      }
    }
    const double ns = static_cast<double>(samples);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        const double p = counts(i, j) / ns;
        table.value_(i, j) = p;
        table.std_error_(i, j) = std::sqrt(p * (1.0 - p) / ns);
      }
    }
    return table;
  }

  std::size_t node_count() const noexcept { return value_.node_count(); }
  std::size_t last_node() const noexcept { return value_.last_node(); }

  double operator()(std::size_t i, std::size_t j) const { return value_(i, j); }
  double std_error(std::size_t i, std::size_t j) const { return std_error_(i, j); }
  void set(std::size_t i, std::size_t j, double p, double se = 0.0) {
    value_(i, j) = p;
    std_error_(i, j) = se;
  }

  /// Expected number of transmitting (two or more node) segments per epoch.
  double expected_transmitting_segments() const {
    double sum = 0.0;
    for (std::size_t i = 0; i < node_count(); ++i) {
      for (std::size_t j = i + 1; j < node_count(); ++j) sum += value_(i, j);
    }
    return sum;
  }

 private:
  PairTable<double> value_;
  PairTable<double> std_error_;
};

/// Pr(i, j) under `model`: closed form in iid mode, Monte-Carlo estimate with
/// its standard error in spatial mode.
inline Estimate segment_probability(std::size_t i, std::size_t j, const PuActivityModel& model,
                                    const Topology& topology, std::size_t samples = 200000,
                                    std::uint64_t seed = 1) {
  const std::size_t last = topology.last_node();
  if (i > j || j > last) throw std::domain_error("segment_probability: need 0 <= i <= j <= M");
  if (model.mode == ActivityMode::iid_bernoulli) {
    return {iid_segment_probability(i, j, model.p_avail, last), 0.0};
  }
  const auto table = ProbabilityTable::from_model(model, topology, samples, seed);
  return {table(i, j), table.std_error(i, j)};
}

/// Local CSI seen by `source`: gains to every downstream node of its segment.
struct FadingDraw {
  std::size_t source = 0;
  /// gains[k] = |H|^2 * D for the link source -> source + 1 + k.
  std::vector<double> gains;
  /// fading[k] = |H|^2 alone.
  std::vector<double> fading;

  double gain_to(std::size_t m) const { return gains.at(m - source - 1); }
};

/// Fresh Rayleigh draw of the local CSI at `source` within `segment`.
inline FadingDraw sample_fading(const Topology& topology, const Segment& segment,
                                std::size_t source, Rng& rng) {
  if (source < segment.head || source >= segment.end) {
    throw std::domain_error("sample_fading: source must lie in [head, end)");
  }
  FadingDraw draw;
  draw.source = source;
  const std::size_t count = segment.end - source;
  draw.gains.resize(count);
  draw.fading.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double h2 = unit_exponential(rng);
    draw.fading[k] = h2;
    draw.gains[k] = h2 * topology.pathloss(source, source + 1 + k);
  }
  return draw;
}

}  // namespace crelay

#endif  // CRELAY_MODEL_HPP

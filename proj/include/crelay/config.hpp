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
 * \file crelay/config.hpp
 *
 * \brief Experiment configuration: JSON schema, validation, grid points.
 *
 * Unknown keys are errors. The budget is given either as "p0" (linear) or
 * "p0_db"; it is stored and echoed in linear form.
 */

#ifndef CRELAY_CONFIG_HPP
#define CRELAY_CONFIG_HPP

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "crelay/sim.hpp"

namespace crelay {

inline constexpr int kConfigSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Placement { evenly_spaced, random_interior, explicit_positions };

inline std::string to_string(Placement p) {
  switch (p) {
    case Placement::evenly_spaced:
      return "evenly_spaced";
    case Placement::random_interior:
      return "random_interior";
    case Placement::explicit_positions:
      return "explicit";
  }
  return "unknown";
}

struct ModelConfig {
  Placement placement = Placement::random_interior;
  std::size_t nodes = 6;
  double span = 5.0;
  double alpha = 2.0;
  std::uint64_t placement_seed = 2024;
  std::vector<double> positions;

  Topology topology() const {
    switch (placement) {
      case Placement::evenly_spaced:
        return Topology::evenly_spaced(nodes, span, alpha);
      case Placement::random_interior:
        return Topology::random_interior(nodes, span, alpha, placement_seed);
      case Placement::explicit_positions:
        return Topology(positions, alpha);
    }
    throw ConfigError("model: unknown placement");
  }
};

/// One swept coordinate: start, start + step, ... up to stop (inclusive,
/// with a relative tolerance of 1e-9 steps).
struct GridAxis {
  std::string key;
  double start = 0.0;
  double stop = 0.0;
  double step = 1.0;

  std::vector<double> values() const {
    if (!(step > 0.0) || !std::isfinite(start) || !std::isfinite(stop)) {
      throw ConfigError("grid " + key + ": need finite bounds and step > 0");
    }
    std::vector<double> out;
    for (std::size_t k = 0;; ++k) {
      const double v = start + static_cast<double>(k) * step;
      if (v > stop + 1e-9 * step) break;
      out.push_back(v);
    }
    return out;
  }
};

/// Keys a grid axis may set.
inline const std::set<std::string>& grid_keys() {
  static const std::set<std::string> keys{"p0",   "p0_db", "p_unavail", "p_avail",        "nodes",
                                          "alpha", "span", "seed",      "pu_active_prob", "pu_density"};
  return keys;
}

/// Parses KEY=START:STOP:STEP.
inline GridAxis parse_grid_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("grid: expected KEY=START:STOP:STEP, got '" + text + "'");
  GridAxis axis;
  axis.key = text.substr(0, eq);
  if (!grid_keys().count(axis.key)) throw ConfigError("grid: unknown key '" + axis.key + "'");
  std::vector<double> parts;
  std::stringstream ss(text.substr(eq + 1));
  for (std::string item; std::getline(ss, item, ':');) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("grid: bad number '" + item + "' in '" + text + "'");
    }
  }
  if (parts.size() != 3) throw ConfigError("grid: expected KEY=START:STOP:STEP, got '" + text + "'");
  axis.start = parts[0];
  axis.stop = parts[1];
  axis.step = parts[2];
  axis.values();
  return axis;
}

struct ExperimentConfig {
  ModelConfig model;
  PuActivityModel activity = PuActivityModel::iid(0.85);
  double p0 = 100.0;
  std::vector<Scheme> schemes = all_schemes();
  SolverOptions solver;
  MasterOptions master;
  std::size_t epochs = 500;
  std::size_t episodes_per_epoch = 4;
  std::size_t min_pair_episodes = 2000;
  double pr_cutoff = 1e-6;
  std::size_t pr_samples = 200000;
  double cache_quantum = 0.01;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  std::vector<GridAxis> grid;

  void validate() const {
    if (model.placement == Placement::explicit_positions) {
      if (model.positions.size() < 2) throw ConfigError("model: need at least two positions");
    } else if (model.nodes < 2) {
      throw ConfigError("model: need at least two nodes");
    }
    if (!(model.span > 0.0)) throw ConfigError("model: span must be > 0");
    if (!(p0 > 0.0) || !std::isfinite(p0)) throw ConfigError("budget: P0 must be > 0");
    if (schemes.empty()) throw ConfigError("schemes: need at least one scheme");
    if (!(pr_cutoff >= 0.0)) throw ConfigError("simulation: pr_cutoff must be >= 0");
    try {
      to_sim_config().validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  SimConfig to_sim_config() const {
    SimConfig s;
    s.topology = model.topology();
    s.activity = activity;
    s.p0 = p0;
    s.epochs = epochs;
    s.episodes_per_epoch = episodes_per_epoch;
    s.min_pair_episodes = min_pair_episodes;
    s.seed = seed;
    s.solver = solver;
    s.master = master;
    s.pr_cutoff = pr_cutoff;
    s.pr_samples = pr_samples;
    s.cache_quantum = cache_quantum;
    return s;
  }

  /// Sets one grid coordinate.
  void apply(const std::string& key, double value) {
    if (key == "p0") {
      p0 = value;
    } else if (key == "p0_db") {
      p0 = db_to_linear(value);
    } else if (key == "p_unavail") {
      activity.p_avail = 1.0 - value;
    } else if (key == "p_avail") {
      activity.p_avail = value;
    } else if (key == "nodes") {
      model.nodes = static_cast<std::size_t>(std::llround(value));
    } else if (key == "alpha") {
      model.alpha = value;
    } else if (key == "span") {
      model.span = value;
    } else if (key == "seed") {
      seed = static_cast<std::uint64_t>(std::llround(value));
    } else if (key == "pu_active_prob") {
      activity.pu_active_prob = value;
    } else if (key == "pu_density") {
      activity.pu_density = value;
    } else {
      throw ConfigError("grid: unknown key '" + key + "'");
    }
  }
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

inline void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json model{{"placement", to_string(c.model.placement)}, {"alpha", c.model.alpha}};
  if (c.model.placement == Placement::explicit_positions) {
    model["positions"] = c.model.positions;
  } else {
    model["nodes"] = c.model.nodes;
    model["span"] = c.model.span;
    if (c.model.placement == Placement::random_interior) model["placement_seed"] = c.model.placement_seed;
  }
  json activity{{"mode", to_string(c.activity.mode)}, {"epoch_frames", c.activity.epoch_frames}};
  if (c.activity.mode == ActivityMode::iid_bernoulli) {
    activity["p_avail"] = c.activity.p_avail;
  } else {
    activity["pu_density"] = c.activity.pu_density;
    activity["pu_active_prob"] = c.activity.pu_active_prob;
    activity["exclusion_radius"] = c.activity.exclusion_radius;
    activity["strip_width"] = c.activity.strip_width;
  }
  json schemes = json::array();
  for (Scheme s : c.schemes) schemes.push_back(to_string(s));
  json grid = json::array();
  for (const auto& g : c.grid) grid.push_back({{"key", g.key}, {"start", g.start}, {"stop", g.stop}, {"step", g.step}});
  return json{
      {"schema_version", kConfigSchemaVersion},
      {"model", model},
      {"activity", activity},
      {"budget", {{"p0", c.p0}}},
      {"schemes", schemes},
      {"solver",
       {{"mc_samples", c.solver.mc_samples},
        {"power_tolerance", c.solver.power_tolerance},
        {"cap_ratio", c.solver.cap_ratio},
        {"floor_ratio", c.solver.floor_ratio},
        {"max_calibration_iterations", c.solver.max_calibration_iterations},
        {"power_metric", to_string(c.solver.power_metric)}}},
      {"master",
       {{"step_a", c.master.step_a},
        {"step_b", c.master.step_b},
        {"max_iterations", c.master.max_iterations},
        {"objective_tolerance", c.master.objective_tolerance},
        {"window", c.master.window},
        {"tie_tolerance", c.master.tie_tolerance}}},
      {"simulation",
       {{"epochs", c.epochs},
        {"episodes_per_epoch", c.episodes_per_epoch},
        {"min_pair_episodes", c.min_pair_episodes},
        {"pr_cutoff", c.pr_cutoff},
        {"pr_samples", c.pr_samples},
        {"cache_quantum", c.cache_quantum}}},
      {"seed", c.seed},
      {"output", {{"dir", c.output_dir}}},
      {"grid", grid},
  };
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::read;
  using detail::reject_unknown;
  using detail::require_object;
  require_object(j, "config");
  reject_unknown(j, "config", {"schema_version", "model", "activity", "budget", "schemes", "solver",
                               "master", "simulation", "seed", "output", "grid"});
  int version = kConfigSchemaVersion;
  read(j, "schema_version", version, "config");
  if (version != kConfigSchemaVersion) {
    throw ConfigError("config: unsupported schema_version " + std::to_string(version));
  }
  ExperimentConfig c;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    require_object(m, "model");
    reject_unknown(m, "model", {"placement", "nodes", "span", "alpha", "placement_seed", "positions"});
    std::string placement = to_string(c.model.placement);
    read(m, "placement", placement, "model");
    if (placement == "evenly_spaced") {
      c.model.placement = Placement::evenly_spaced;
    } else if (placement == "random_interior") {
      c.model.placement = Placement::random_interior;
    } else if (placement == "explicit") {
      c.model.placement = Placement::explicit_positions;
    } else {
      throw ConfigError("model.placement: unknown value '" + placement + "'");
    }
    read(m, "nodes", c.model.nodes, "model");
    read(m, "span", c.model.span, "model");
    read(m, "alpha", c.model.alpha, "model");
    read(m, "placement_seed", c.model.placement_seed, "model");
    read(m, "positions", c.model.positions, "model");
  }
  if (j.contains("activity")) {
    const auto& a = j.at("activity");
    require_object(a, "activity");
    reject_unknown(a, "activity", {"mode", "p_avail", "p_unavail", "pu_density", "pu_active_prob",
                                   "exclusion_radius", "strip_width", "epoch_frames"});
    std::string mode = "iid";
    read(a, "mode", mode, "activity");
    if (mode == "iid") {
      c.activity.mode = ActivityMode::iid_bernoulli;
    } else if (mode == "spatial") {
      c.activity.mode = ActivityMode::spatial_field;
    } else {
      throw ConfigError("activity.mode: unknown value '" + mode + "'");
    }
    if (a.contains("p_avail") && a.contains("p_unavail")) {
      throw ConfigError("activity: give p_avail or p_unavail, not both");
    }
    read(a, "p_avail", c.activity.p_avail, "activity");
    if (a.contains("p_unavail")) {
      double q = 0.0;
      read(a, "p_unavail", q, "activity");
      c.activity.p_avail = 1.0 - q;
    }
    read(a, "pu_density", c.activity.pu_density, "activity");
    read(a, "pu_active_prob", c.activity.pu_active_prob, "activity");
    read(a, "exclusion_radius", c.activity.exclusion_radius, "activity");
    read(a, "strip_width", c.activity.strip_width, "activity");
    read(a, "epoch_frames", c.activity.epoch_frames, "activity");
  }
  if (j.contains("budget")) {
    const auto& b = j.at("budget");
    require_object(b, "budget");
    reject_unknown(b, "budget", {"p0", "p0_db"});
    if (b.contains("p0") == b.contains("p0_db")) throw ConfigError("budget: give exactly one of p0, p0_db");
    if (b.contains("p0")) {
      read(b, "p0", c.p0, "budget");
    } else {
      double db = 0.0;
      read(b, "p0_db", db, "budget");
      c.p0 = db_to_linear(db);
    }
  }
  if (j.contains("schemes")) {
    std::vector<std::string> names;
    read(j, "schemes", names, "config");
    c.schemes.clear();
    for (const auto& n : names) {
      try {
        c.schemes.push_back(parse_scheme(n));
      } catch (const std::domain_error& e) {
        throw ConfigError(std::string("schemes: ") + e.what());
      }
    }
  }
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    require_object(s, "solver");
    reject_unknown(s, "solver", {"mc_samples", "power_tolerance", "cap_ratio", "floor_ratio",
                                 "max_calibration_iterations", "power_metric"});
    read(s, "mc_samples", c.solver.mc_samples, "solver");
    read(s, "power_tolerance", c.solver.power_tolerance, "solver");
    read(s, "cap_ratio", c.solver.cap_ratio, "solver");
    read(s, "floor_ratio", c.solver.floor_ratio, "solver");
    read(s, "max_calibration_iterations", c.solver.max_calibration_iterations, "solver");
    std::string metric = to_string(c.solver.power_metric);
    read(s, "power_metric", metric, "solver");
    if (metric == "episode_ratio") {
      c.solver.power_metric = PowerMetric::episode_ratio;
    } else if (metric == "ratio_of_means") {
      c.solver.power_metric = PowerMetric::ratio_of_means;
    } else {
      throw ConfigError("solver.power_metric: unknown value '" + metric + "'");
    }
  }
  if (j.contains("master")) {
    const auto& m = j.at("master");
    require_object(m, "master");
    reject_unknown(m, "master", {"step_a", "step_b", "max_iterations", "objective_tolerance", "window",
                                 "tie_tolerance"});
    read(m, "step_a", c.master.step_a, "master");
    read(m, "step_b", c.master.step_b, "master");
    read(m, "max_iterations", c.master.max_iterations, "master");
    read(m, "objective_tolerance", c.master.objective_tolerance, "master");
    read(m, "window", c.master.window, "master");
    read(m, "tie_tolerance", c.master.tie_tolerance, "master");
  }
  if (j.contains("simulation")) {
    const auto& s = j.at("simulation");
    require_object(s, "simulation");
    reject_unknown(s, "simulation", {"epochs", "episodes_per_epoch", "min_pair_episodes", "pr_cutoff",
                                     "pr_samples", "cache_quantum"});
    read(s, "epochs", c.epochs, "simulation");
    read(s, "episodes_per_epoch", c.episodes_per_epoch, "simulation");
    read(s, "min_pair_episodes", c.min_pair_episodes, "simulation");
    read(s, "pr_cutoff", c.pr_cutoff, "simulation");
    read(s, "pr_samples", c.pr_samples, "simulation");
    read(s, "cache_quantum", c.cache_quantum, "simulation");
  }
  read(j, "seed", c.seed, "config");
  if (j.contains("output")) {
    const auto& o = j.at("output");
    require_object(o, "output");
    reject_unknown(o, "output", {"dir"});
    read(o, "dir", c.output_dir, "output");
  }
  if (j.contains("grid")) {
    if (!j.at("grid").is_array()) throw ConfigError("grid: expected an array");
    for (const auto& g : j.at("grid")) {
      require_object(g, "grid");
      reject_unknown(g, "grid", {"key", "start", "stop", "step"});
      GridAxis axis;
      read(g, "key", axis.key, "grid");
      read(g, "start", axis.start, "grid");
      read(g, "stop", axis.stop, "grid");
      read(g, "step", axis.step, "grid");
      if (!grid_keys().count(axis.key)) throw ConfigError("grid: unknown key '" + axis.key + "'");
      axis.values();
      c.grid.push_back(axis);
    }
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

/// Cartesian product of the grid axes, first axis slowest. No axes gives
/// the base config as the single point; an axis with no values gives none.
inline std::vector<std::pair<std::vector<std::pair<std::string, double>>, ExperimentConfig>> grid_points(
    const ExperimentConfig& base) {
  std::vector<std::pair<std::vector<std::pair<std::string, double>>, ExperimentConfig>> out;
  out.push_back({{}, base});
  for (const auto& axis : base.grid) {
    std::vector<std::pair<std::vector<std::pair<std::string, double>>, ExperimentConfig>> next;
    for (const auto& [coords, cfg] : out) {
      for (double v : axis.values()) {
        auto c2 = coords;
        c2.emplace_back(axis.key, v);
        ExperimentConfig cfg2 = cfg;
        cfg2.apply(axis.key, v);
        next.emplace_back(std::move(c2), std::move(cfg2));
      }
    }
    out = std::move(next);
  }
  for (auto& [coords, cfg] : out) {
    cfg.grid.clear();
    cfg.validate();
  }
  return out;
}

}  // namespace crelay

#endif  // CRELAY_CONFIG_HPP

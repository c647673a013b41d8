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
 * \file crelay/commands.hpp
 *
 * \brief The calibrate, simulate, sweep and verify commands.
 *
 * Output directory layout:
 *
 *     calibration.json          master solution, probabilities, memory report
 *     policies/pair_I_J.json    one calibrated policy per pair
 *     results.csv               simulate rows
 *     simulate_manifest.json
 *     points/K/...              sweep point K (the same layout), plus `done`
 *     sweep.csv, sweep_report.json
 *
 * Artifacts carry no timestamps; reruns with equal config and seeds are
 * byte-identical. Wall-clock times go to the manifests only.
 */

#ifndef CRELAY_COMMANDS_HPP
#define CRELAY_COMMANDS_HPP

#include <algorithm>
#include <chrono>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crelay/config.hpp"
#include "crelay/io.hpp"
#include "crelay/sim.hpp"
#include "crelay/verify.hpp"

namespace crelay {

inline constexpr const char* kVersion = "0.1.0";

class StaleArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommandOptions {
  fs::path out;
  unsigned threads = 1;
  std::ostream* log = nullptr;

  void note(const std::string& line) const {
    if (log) *log << line << "\n";
  }
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline SimConfig sim_config(const ExperimentConfig& cfg, const CommandOptions& opts) {
  SimConfig s = cfg.to_sim_config();
  s.master.threads = std::max(1u, opts.threads);
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

/// Offline table memory: entries per pair and in total, with the bounds
/// M + 1 per pair and (M + 1)^3 overall.
struct MemoryReport {
  std::size_t last_node = 0;
  std::size_t pairs = 0;
  std::size_t max_entries_per_pair = 0;
  std::size_t total_entries = 0;
  std::size_t per_pair_bound = 0;
  std::size_t total_bound = 0;

  std::size_t bytes() const { return total_entries * sizeof(double); }
  bool within_bounds() const { return max_entries_per_pair <= per_pair_bound && total_entries <= total_bound; }

  nlohmann::json to_json() const {
    return {{"last_node", last_node},
            {"pairs", pairs},
            {"max_entries_per_pair", max_entries_per_pair},
            {"total_entries", total_entries},
            {"table_bytes", bytes()},
            {"per_pair_bound", per_pair_bound},
            {"total_bound", total_bound},
            {"within_bounds", within_bounds()}};
  }
};

inline MemoryReport memory_report(const PolicySet& policies, std::size_t last_node) {
  MemoryReport m;
  m.last_node = last_node;
  m.pairs = policies.size();
  m.per_pair_bound = last_node + 1;
  m.total_bound = (last_node + 1) * (last_node + 1) * (last_node + 1);
  for (const auto& [pair, p] : policies) {
    m.max_entries_per_pair = std::max(m.max_entries_per_pair, table_entries(p));
    m.total_entries += table_entries(p);
  }
  return m;
}

struct CalibrateSummary {
  std::string config_hash;
  std::size_t pairs = 0;
  MemoryReport memory;
  double throughput = 0.0;
};

inline CalibrateSummary cmd_calibrate(const ExperimentConfig& cfg, const CommandOptions& opts) {
  cfg.validate();
  const SimConfig sim = detail::sim_config(cfg, opts);
  const std::string hash = config_hash(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  ProposedPlan plan;
  try {
    plan = plan_proposed(sim);
  } catch (const CalibrationError& e) {
    throw CalibrationError(std::string("calibration failed: ") + e.what());
  }
  if (plan.master.pairs.empty()) {
    opts.note("warning: no pair has Pr above the cutoff " + csv_number(cfg.pr_cutoff) +
              "; writing an empty artifact");
  }

  const MemoryReport mem = memory_report(plan.policies, sim.topology.last_node());
  if (!mem.within_bounds()) {
    throw std::logic_error("offline tables exceed the O(M) per pair / O(M^3) total bound");
  }

  const fs::path dir = opts.out / "policies";
  fs::create_directories(dir);
  std::set<std::string> written;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [pair, policy] : plan.policies) {
    const std::string name = policy_file_name(pair);
    write_json(dir / name, to_json(policy, hash));
    written.insert(name);
    pairs.push_back({{"pair", {pair.head, pair.end}}, {"file", "policies/" + name}, {"table_entries", table_entries(policy)}});
  }
  // Policies from an earlier run with a different pair set.
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("pair_", 0) == 0 && !written.count(name)) fs::remove(entry.path());
  }

  const nlohmann::json doc{{"schema_version", kArtifactSchemaVersion},
                           {"kind", "calibration"},
                           {"config_hash", hash},
                           {"config", to_json(cfg)},
                           {"probabilities", to_json(plan.pr)},
                           {"master", to_json(plan.master)},
                           {"policies", pairs},
                           {"memory", mem.to_json()},
                           {"rate_evaluations", plan.rate_evaluations}};
  write_json(opts.out / "calibration.json", doc);
  write_json(opts.out / "calibrate_manifest.json",
             {{"schema_version", kArtifactSchemaVersion},
              {"kind", "calibrate_manifest"},
              {"version", kVersion},
              {"config_hash", hash},
              {"seed", cfg.seed},
              {"threads", opts.threads},
              {"wall_clock_seconds", detail::seconds_since(t0)}});

  opts.note("calibrated " + std::to_string(plan.policies.size()) + " pairs; table memory " +
            std::to_string(mem.total_entries) + " values (" + std::to_string(mem.bytes()) + " bytes), max " +
            std::to_string(mem.max_entries_per_pair) + " per pair");
  return {hash, plan.policies.size(), mem, plan.master.throughput};
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Master solution, probabilities and every policy, after the stale-table
/// and coverage checks.
struct LoadedPlan {
  ProbabilityTable pr;
  MasterSolution master;
  PolicySet policies;
};

inline LoadedPlan load_plan(const ExperimentConfig& cfg, const fs::path& dir) {
  const fs::path file = dir / "calibration.json";
  if (!fs::exists(file)) {
    throw MissingArtifactError("missing calibration artifact '" + file.string() + "'; run calibrate first");
  }
  const auto doc = read_json(file);
  const std::string want = config_hash(cfg);
  const std::string have = doc.at("config_hash").get<std::string>();
  if (have != want) {
    throw StaleArtifactError("stale artifacts in '" + dir.string() + "': built for config " + have +
                             ", current config is " + want + "; rerun calibrate");
  }
  LoadedPlan plan;
  plan.pr = probability_table_from_json(doc.at("probabilities"));
  plan.master = master_solution_from_json(doc.at("master"));
  for (const auto& pair : plan.master.pairs) {
    const fs::path pf = dir / "policies" / policy_file_name(pair);
    if (!fs::exists(pf)) {
      throw MissingArtifactError("missing policy artifact for pair (" + std::to_string(pair.head) + "," +
                                 std::to_string(pair.end) + "): " + pf.string());
    }
    const auto pj = read_json(pf);
    if (pj.at("config_hash").get<std::string>() != want) {
      throw StaleArtifactError("stale policy artifact for pair (" + std::to_string(pair.head) + "," +
                               std::to_string(pair.end) + "): " + pf.string());
    }
    plan.policies.emplace(pair, policy_from_json(pj));
  }
  return plan;
}

inline std::string results_header() { return csv_line(metric_columns()); }

/// One row per scheme, in the given order. The proposed scheme uses the
/// artifacts in opts.out.
inline std::vector<RunMetrics> cmd_simulate(const ExperimentConfig& cfg, const CommandOptions& opts) {
  cfg.validate();
  const SimConfig sim = detail::sim_config(cfg, opts);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<RunMetrics> rows;
  const bool need_plan = std::find(cfg.schemes.begin(), cfg.schemes.end(), Scheme::proposed) != cfg.schemes.end();
  LoadedPlan plan;
  if (need_plan) plan = load_plan(cfg, opts.out);
  std::string csv = results_header();
  for (Scheme s : cfg.schemes) {
    rows.push_back(s == Scheme::proposed ? run_proposed(sim, plan.master, plan.policies, plan.pr)
                                         : run_baseline(s, sim));
    csv += csv_line(metric_fields(rows.back(), cfg.seed));
  }
  write_atomic(opts.out / "results.csv", csv);
  nlohmann::json schemes = nlohmann::json::array();
  for (Scheme s : cfg.schemes) schemes.push_back(to_string(s));
  write_json(opts.out / "simulate_manifest.json",
             {{"schema_version", kArtifactSchemaVersion},
              {"kind", "simulate_manifest"},
              {"version", kVersion},
              {"config", to_json(cfg)},
              {"config_hash", config_hash(cfg)},
              {"seed", cfg.seed},
              {"schemes", schemes},
              {"columns", metric_columns()},
              {"rows", rows.size()},
              {"files", {"results.csv"}},
              {"threads", opts.threads},
              {"wall_clock_seconds", detail::seconds_since(t0)}});
  return rows;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepSummary {
  std::size_t points = 0;
  std::size_t completed = 0;
  std::size_t resumed = 0;
  nlohmann::json failures = nlohmann::json::array();

  bool ok() const { return failures.empty(); }
};

inline std::vector<std::string> sweep_header(const ExperimentConfig& cfg) {
  std::vector<std::string> h{"point"};
  for (const auto& axis : cfg.grid) h.push_back(axis.key);
  for (const auto& c : metric_columns()) h.push_back(c);
  return h;
}

/// Calibrate and simulate every grid point into out/points/K. A point whose
/// `done` marker names the same config hash and schemes is reused. Failed
/// points are recorded and skipped.
inline SweepSummary cmd_sweep(const ExperimentConfig& cfg, const CommandOptions& opts) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto points = grid_points(cfg);
  SweepSummary summary;
  summary.points = points.size();
  std::string csv = csv_line(sweep_header(cfg));
  std::string scheme_list;
  for (Scheme s : cfg.schemes) scheme_list += to_string(s) + ";";

  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto& [coords, point_cfg] = points[k];
    CommandOptions po = opts;
    po.out = opts.out / "points" / std::to_string(k);
    const std::string marker_text = config_hash(point_cfg) + " " + std::to_string(point_cfg.seed) + " " +
                                    std::to_string(point_cfg.epochs) + " " + scheme_list + "\n";
    const fs::path marker = po.out / "done";
    try {
      if (fs::exists(marker) && read_file(marker) == marker_text && fs::exists(po.out / "results.csv")) {
        ++summary.resumed;
        opts.note("point " + std::to_string(k) + ": complete, reused");
      } else {
        if (fs::exists(marker)) fs::remove(marker);
        const bool proposed = std::find(point_cfg.schemes.begin(), point_cfg.schemes.end(), Scheme::proposed) !=
                              point_cfg.schemes.end();
        if (proposed) cmd_calibrate(point_cfg, po);
        cmd_simulate(point_cfg, po);
        write_atomic(marker, marker_text);
        opts.note("point " + std::to_string(k) + ": done");
      }
      const auto rows = parse_csv(read_file(po.out / "results.csv"));
      for (std::size_t r = 1; r < rows.size(); ++r) {
        std::vector<std::string> fields{std::to_string(k)};
        for (const auto& [key, v] : coords) fields.push_back(csv_number(v));
        fields.insert(fields.end(), rows[r].begin(), rows[r].end());
        csv += csv_line(fields);
      }
      ++summary.completed;
    } catch (const std::exception& e) {
      nlohmann::json c = nlohmann::json::object();
      for (const auto& [key, v] : coords) c[key] = v;
      summary.failures.push_back({{"point", k}, {"coords", c}, {"error", e.what()}});
      opts.note("point " + std::to_string(k) + ": failed: " + e.what());
    }
  }
  write_atomic(opts.out / "sweep.csv", csv);
  nlohmann::json axes = nlohmann::json::array();
  for (const auto& a : cfg.grid) axes.push_back({{"key", a.key}, {"start", a.start}, {"stop", a.stop}, {"step", a.step}});
  write_json(opts.out / "sweep_report.json",
             {{"schema_version", kArtifactSchemaVersion},
              {"kind", "sweep_report"},
              {"version", kVersion},
              {"config", to_json(cfg)},
              {"axes", axes},
              {"points", summary.points},
              {"completed", summary.completed},
              {"resumed", summary.resumed},
              {"failures", summary.failures},
              {"wall_clock_seconds", detail::seconds_since(t0)}});
  return summary;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

inline VerifyReport cmd_verify(const VerifyOptions& vo, const CommandOptions& opts) {
  VerifyReport rep = run_verify(vo);
  write_json(opts.out / "verify_report.json", to_json(rep));
  for (const auto& c : rep.checks) {
    std::ostringstream line;
    line << to_string(c.status) << "  " << c.name << "  (" << std::setprecision(3) << c.seconds << " s)";
    opts.note(line.str());
  }
  return rep;
}

}  // namespace crelay

#endif  // CRELAY_COMMANDS_HPP

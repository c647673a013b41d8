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
 * \file crelay/io.hpp
 *
 * \brief Artifact persistence: atomic writes, CSV, JSON forms of policies
 * and master solutions, config hashing.
 */

#ifndef CRELAY_IO_HPP
#define CRELAY_IO_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "crelay/config.hpp"
#include "crelay/sim.hpp"

namespace crelay {

inline constexpr int kArtifactSchemaVersion = 1;

class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;

/// Writes to a sibling temp file, then renames over the target.
inline void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw ArtifactError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_atomic(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ArtifactError("'" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Quotes a field when it holds a comma, quote, CR or LF; quotes double.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string csv_number(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

/// Records end in CRLF.
inline std::string csv_line(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t k = 0; k < fields.size(); ++k) {
    if (k) out += ',';
    out += csv_field(fields[k]);
  }
  return out + "\r\n";
}

/// Parses RFC 4180 text into records (used by tests and resume).
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t k = 0; k < text.size(); ++k) {
    const char c = text[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < text.size() && text[k + 1] == '"') {
          field += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && k + 1 < text.size() && text[k + 1] == '\n') ++k;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw ArtifactError("csv: unterminated quoted field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Result rows
// ---------------------------------------------------------------------------

/// Columns of simulate and sweep output, after any grid coordinates.
inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols{
      "scheme",        "seed",         "p0",           "p0_db",          "throughput",
      "throughput_se", "end_to_end",   "end_to_end_se", "total_power",   "total_power_se",
      "balance_active", "observed_segments", "skipped_segments"};
  return cols;
}

inline std::vector<std::string> metric_fields(const RunMetrics& m, std::uint64_t seed) {
  return {to_string(m.scheme),
          std::to_string(seed),
          csv_number(m.p0),
          csv_number(linear_to_db(m.p0)),
          csv_number(m.throughput),
          csv_number(m.throughput_se),
          csv_number(m.end_to_end),
          csv_number(m.end_to_end_se),
          csv_number(m.total_power),
          csv_number(m.total_power_se),
          m.balance_active ? "1" : "0",
          std::to_string(m.observed_segments),
          std::to_string(m.skipped_segments)};
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

/// Hash of the fields that determine calibration artifacts. Schemes, output
/// paths, grid, thread count and simulation length are excluded.
inline std::string config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  nlohmann::json relevant{{"model", j["model"]},
                          {"activity", j["activity"]},
                          {"budget", j["budget"]},
                          {"solver", j["solver"]},
                          {"master", j["master"]},
                          {"seed", j["seed"]},
                          {"pr_cutoff", j["simulation"]["pr_cutoff"]},
                          {"pr_samples", j["simulation"]["pr_samples"]},
                          {"cache_quantum", j["simulation"]["cache_quantum"]}};
  return hex64(fnv1a(relevant.dump()));
}

// ---------------------------------------------------------------------------
// JSON forms
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const SegmentProblem& p) {
  std::vector<std::vector<double>> pl(p.hops() + 1, std::vector<double>(p.hops() + 1, 0.0));
  for (std::size_t a = 0; a <= p.hops(); ++a) {
    for (std::size_t b = a + 1; b <= p.hops(); ++b) pl[a][b] = p.pathloss(a, b);
  }
  return {{"head", p.head()},
          {"end", p.end()},
          {"pathloss", pl},
          {"pbar", p.pbar},
          {"power_floor", p.limits.floor},
          {"power_cap", p.limits.cap},
          {"mc_samples", p.mc_samples},
          {"packet_bits", p.packet_bits},
          {"seed", p.seed},
          {"hash", hex64(p.hash())}};
}

inline SegmentProblem segment_problem_from_json(const nlohmann::json& j) {
  SegmentProblem p;
  p.segment = {j.at("head").get<std::size_t>(), j.at("end").get<std::size_t>()};
  const auto pl = j.at("pathloss").get<std::vector<std::vector<double>>>();
  if (pl.size() != p.hops() + 1) throw ArtifactError("policy: pathloss size does not match the segment");
  p.pathloss = PairTable<double>(pl.size(), 0.0);
  for (std::size_t a = 0; a < pl.size(); ++a) {
    if (pl[a].size() != pl.size()) throw ArtifactError("policy: pathloss must be square");
    for (std::size_t b = a + 1; b < pl.size(); ++b) p.pathloss(a, b) = pl[a][b];
  }
  p.pbar = j.at("pbar").get<double>();
  p.limits = {j.at("power_floor").get<double>(), j.at("power_cap").get<double>()};
  p.mc_samples = j.at("mc_samples").get<std::size_t>();
  p.packet_bits = j.at("packet_bits").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  if (hex64(p.hash()) != j.at("hash").get<std::string>()) {
    throw ArtifactError("policy: segment problem hash mismatch (corrupted artifact)");
  }
  return p;
}

inline nlohmann::json to_json(const CalibrationReport& r) {
  return {{"power_episode_ratio", r.power_episode_ratio},
          {"power_ratio_of_means", r.power_ratio_of_means},
          {"metric", to_string(r.metric)},
          {"rate", r.rate},
          {"rate_se", r.rate_se},
          {"mean_time", r.mean_time},
          {"iterations", r.iterations},
          {"budget_slack", r.budget_slack}};
}

inline CalibrationReport calibration_report_from_json(const nlohmann::json& j) {
  CalibrationReport r;
  r.power_episode_ratio = j.at("power_episode_ratio").get<double>();
  r.power_ratio_of_means = j.at("power_ratio_of_means").get<double>();
  r.metric = j.at("metric").get<std::string>() == "episode_ratio" ? PowerMetric::episode_ratio
                                                                  : PowerMetric::ratio_of_means;
  r.rate = j.at("rate").get<double>();
  r.rate_se = j.at("rate_se").get<double>();
  r.mean_time = j.at("mean_time").get<double>();
  r.iterations = j.at("iterations").get<std::size_t>();
  r.budget_slack = j.at("budget_slack").get<bool>();
  return r;
}

/// Offline table entries held by one policy: one value per node s in the
/// segment.
inline std::size_t table_entries(const CalibratedPolicy& p) { return p.table.values.size(); }

inline nlohmann::json to_json(const CalibratedPolicy& p, const std::string& hash) {
  return {{"schema_version", kArtifactSchemaVersion},
          {"kind", "policy"},
          {"config_hash", hash},
          {"pair", {p.problem.head(), p.problem.end()}},
          {"problem", to_json(p.problem)},
          {"lambda", p.lambda},
          {"table", {{"head", p.table.head}, {"values", p.table.values}}},
          {"table_entries", table_entries(p)},
          {"report", to_json(p.report)}};
}

inline CalibratedPolicy policy_from_json(const nlohmann::json& j) {
  if (j.at("kind").get<std::string>() != "policy") throw ArtifactError("not a policy artifact");
  CalibratedPolicy p;
  p.problem = segment_problem_from_json(j.at("problem"));
  p.lambda = j.at("lambda").get<double>();
  p.table.head = j.at("table").at("head").get<std::size_t>();
  p.table.values = j.at("table").at("values").get<std::vector<double>>();
  if (p.table.head != p.problem.head() || p.table.values.size() != p.problem.hops() + 1) {
    throw ArtifactError("policy: value table does not cover the segment");
  }
  p.report = calibration_report_from_json(j.at("report"));
  return p;
}

inline nlohmann::json to_json(const RateSample& s) {
  return {{"rate", s.rate}, {"rate_se", s.rate_se}, {"lambda", s.lambda}, {"slope", s.slope}, {"power", s.power}};
}

inline RateSample rate_sample_from_json(const nlohmann::json& j) {
  return {j.at("rate").get<double>(), j.at("rate_se").get<double>(), j.at("lambda").get<double>(),
          j.at("slope").get<double>(), j.at("power").get<double>()};
}

/// Master solution export: allocation and multiplier per pair, section
/// rates, objective traces.
inline nlohmann::json to_json(const MasterSolution& s) {
  nlohmann::json pairs = nlohmann::json::array();
  for (std::size_t k = 0; k < s.pairs.size(); ++k) {
    pairs.push_back({{"pair", {s.pairs[k].head, s.pairs[k].end}},
                     {"weight", s.weights[k]},
                     {"allocation", s.allocation.empty() ? 0.0 : s.allocation[k]},
                     {"sample", s.samples.empty() ? to_json(RateSample{}) : to_json(s.samples[k])}});
  }
  return {{"pairs", pairs},
          {"sections", s.sections},
          {"trace", s.trace},
          {"best_trace", s.best_trace},
          {"throughput", s.throughput},
          {"end_to_end", s.end_to_end},
          {"balance_active", s.balance_active},
          {"iterations", s.iterations},
          {"budget_used", s.budget_used}};
}

inline MasterSolution master_solution_from_json(const nlohmann::json& j) {
  MasterSolution s;
  for (const auto& p : j.at("pairs")) {
    const auto ij = p.at("pair").get<std::vector<std::size_t>>();
    if (ij.size() != 2) throw ArtifactError("master: pair must have two nodes");
    s.pairs.push_back({ij[0], ij[1]});
    s.weights.push_back(p.at("weight").get<double>());
    s.allocation.push_back(p.at("allocation").get<double>());
    s.samples.push_back(rate_sample_from_json(p.at("sample")));
  }
  s.sections = j.at("sections").get<std::vector<double>>();
  s.trace = j.at("trace").get<std::vector<double>>();
  s.best_trace = j.at("best_trace").get<std::vector<double>>();
  s.throughput = j.at("throughput").get<double>();
  s.end_to_end = j.at("end_to_end").get<double>();
  s.balance_active = j.at("balance_active").get<bool>();
  s.iterations = j.at("iterations").get<std::size_t>();
  s.budget_used = j.at("budget_used").get<double>();
  return s;
}

/// Upper triangle rows [i, j, Pr, SE].
inline nlohmann::json to_json(const ProbabilityTable& pr) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < pr.node_count(); ++i) {
    for (std::size_t j = i; j < pr.node_count(); ++j) rows.push_back({i, j, pr(i, j), pr.std_error(i, j)});
  }
  return {{"nodes", pr.node_count()}, {"entries", rows}};
}

inline ProbabilityTable probability_table_from_json(const nlohmann::json& j) {
  ProbabilityTable pr(j.at("nodes").get<std::size_t>());
  for (const auto& row : j.at("entries")) {
    pr.set(row.at(0).get<std::size_t>(), row.at(1).get<std::size_t>(), row.at(2).get<double>(),
           row.at(3).get<double>());
  }
  return pr;
}

inline std::string policy_file_name(PairIndex pair) {
  return "pair_" + std::to_string(pair.head) + "_" + std::to_string(pair.end) + ".json";
}

}  // namespace crelay

#endif  // CRELAY_IO_HPP

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

// crelay: calibrate, simulate, sweep, verify.
//
// Exit status: 0 success, 1 runtime or verification failure, 2 bad usage or
// config, 3 stale artifacts, 4 missing artifacts.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crelay/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned threads = 1;
  std::vector<std::string> schemes;
  std::vector<std::string> grid;
};

void add_common(CLI::App* cmd, Common& c, bool grid) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Override the config seed");
  cmd->add_option("--out", c.out, "Output directory (default: the config's output.dir)");
  cmd->add_option("--threads", c.threads, "Worker threads for pair calibration")->check(CLI::PositiveNumber);
  cmd->add_option("--scheme", c.schemes, "Scheme to run (repeatable; default: the config's list)");
  if (grid) cmd->add_option("--grid", c.grid, "Grid axis KEY=START:STOP:STEP (repeatable, appended)");
}

crelay::ExperimentConfig resolve(const Common& c) {
  crelay::ExperimentConfig cfg = crelay::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (!c.schemes.empty()) {
    cfg.schemes.clear();
    for (const auto& s : c.schemes) {
      try {
        cfg.schemes.push_back(crelay::parse_scheme(s));
      } catch (const std::domain_error& e) {
        throw crelay::ConfigError(e.what());
      }
    }
  }
  for (const auto& g : c.grid) cfg.grid.push_back(crelay::parse_grid_axis(g));
  cfg.validate();
  return cfg;
}

crelay::CommandOptions options(const crelay::ExperimentConfig& cfg, unsigned threads) {
  crelay::CommandOptions o;
  o.out = cfg.output_dir;
  o.threads = threads;
  o.log = &std::cerr;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crelay: cooperative relaying over opportunistic spectrum"};
  app.require_subcommand(1);
  app.set_version_flag("--version", crelay::kVersion);

  Common cal, sim, swp;
  auto* calibrate = app.add_subcommand("calibrate", "Solve the master problem and write policy artifacts");
  add_common(calibrate, cal, false);
  auto* simulate = app.add_subcommand("simulate", "Simulate schemes from calibrated artifacts");
  add_common(simulate, sim, false);
  auto* sweep = app.add_subcommand("sweep", "Calibrate and simulate every grid point");
  add_common(sweep, swp, true);

  auto* verify = app.add_subcommand("verify", "Run the verification suite");
  std::string verify_out = ".";
  std::uint64_t verify_seed = 1;
  bool quick = false;
  std::string mutate;
  verify->add_option("--out", verify_out, "Directory for verify_report.json");
  verify->add_option("--seed", verify_seed, "Seed for randomized checks");
  verify->add_flag("--quick", quick, "Skip the slow measurements");
  verify->add_option("--mutate", mutate, "Inject a known defect (flow-balance-sign)")
      ->check(CLI::IsMember({"flow-balance-sign"}))
      ->group("");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*calibrate) {
      const auto cfg = resolve(cal);
      crelay::cmd_calibrate(cfg, options(cfg, cal.threads));
      return 0;
    }
    if (*simulate) {
      const auto cfg = resolve(sim);
      const auto rows = crelay::cmd_simulate(cfg, options(cfg, sim.threads));
      std::cerr << "wrote " << rows.size() << " rows to " << (crelay::fs::path(cfg.output_dir) / "results.csv")
                << "\n";
      return 0;
    }
    if (*sweep) {
      const auto cfg = resolve(swp);
      const auto summary = crelay::cmd_sweep(cfg, options(cfg, swp.threads));
      std::cerr << summary.completed << "/" << summary.points << " points complete (" << summary.resumed
                << " reused), " << summary.failures.size() << " failed\n";
      return summary.ok() ? 0 : 1;
    }
    if (*verify) {
      crelay::VerifyOptions vo;
      vo.seed = verify_seed;
      vo.quick = quick;
      if (mutate == "flow-balance-sign") vo.flow_balance_sign = -1.0;
      crelay::CommandOptions co;
      co.out = verify_out;
      co.log = &std::cerr;
      const auto rep = crelay::cmd_verify(vo, co);
      std::cout << crelay::to_json(rep).dump(2) << "\n";
      return rep.passed() ? 0 : 1;
    }
  } catch (const crelay::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const crelay::StaleArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const crelay::MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

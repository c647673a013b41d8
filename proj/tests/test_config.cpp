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

#include <gtest/gtest.h>

#include "crelay/config.hpp"

namespace crelay {
namespace {

using nlohmann::json;

json minimal() {
  return json::parse(R"({
    "schema_version": 1,
    "model": {"placement": "evenly_spaced", "nodes": 4, "span": 3.0, "alpha": 3.0},
    "activity": {"mode": "iid", "p_unavail": 0.15},
    "budget": {"p0_db": 20.0}
  })");
}

TEST(DecibelTest, KnownPairs) {
  EXPECT_DOUBLE_EQ(db_to_linear(0.0), 1.0);
  EXPECT_DOUBLE_EQ(db_to_linear(10.0), 10.0);
  EXPECT_DOUBLE_EQ(db_to_linear(20.0), 100.0);
  EXPECT_DOUBLE_EQ(db_to_linear(30.0), 1000.0);
  EXPECT_NEAR(db_to_linear(3.0), 1.9952623149688795, 1e-15);
  EXPECT_NEAR(db_to_linear(-10.0), 0.1, 1e-16);
  EXPECT_NEAR(linear_to_db(db_to_linear(17.5)), 17.5, 1e-12);
}

TEST(ConfigTest, DecibelAndLinearBudgetsAgree) {
  auto a = minimal();
  auto b = minimal();
  b["budget"] = {{"p0", 100.0}};
  EXPECT_DOUBLE_EQ(config_from_json(a).p0, config_from_json(b).p0);
  a["budget"] = {{"p0", 1.0}, {"p0_db", 0.0}};
  EXPECT_THROW(config_from_json(a), ConfigError);
  a["budget"] = json::object();
  EXPECT_THROW(config_from_json(a), ConfigError);
}

TEST(ConfigTest, RoundTripIsSemanticallyIdentical) {
  auto j = minimal();
  j["schemes"] = {"proposed", "baseline4"};
  j["grid"] = {{{"key", "p0_db"}, {"start", 0.0}, {"stop", 40.0}, {"step", 5.0}}};
  j["solver"] = {{"mc_samples", 700}, {"power_metric", "ratio_of_means"}};
  j["master"] = {{"step_b", 7.0}};
  const auto c = config_from_json(j);
  const auto echoed = to_json(c);
  const auto again = config_from_json(echoed);
  EXPECT_EQ(to_json(again), echoed);
  EXPECT_EQ(again.schemes, c.schemes);
  EXPECT_EQ(again.solver.mc_samples, 700u);
  EXPECT_EQ(again.solver.power_metric, PowerMetric::ratio_of_means);
  EXPECT_EQ(again.master.step_b, 7.0);
  EXPECT_DOUBLE_EQ(again.activity.p_avail, 0.85);
  EXPECT_EQ(again.model.topology().positions(), c.model.topology().positions());
}

TEST(ConfigTest, SpatialAndExplicitRoundTrip) {
  auto j = minimal();
  j["model"] = {{"placement", "explicit"}, {"positions", {0.0, 1.5, 2.0, 4.0}}, {"alpha", 2.5}};
  j["activity"] = {{"mode", "spatial"}, {"pu_density", 0.3}, {"pu_active_prob", 0.4}, {"exclusion_radius", 0.8},
                   {"strip_width", 2.0}};
  const auto c = config_from_json(j);
  EXPECT_EQ(c.activity.mode, ActivityMode::spatial_field);
  EXPECT_EQ(c.model.topology().node_count(), 4u);
  EXPECT_EQ(to_json(config_from_json(to_json(c))), to_json(c));
}

TEST(ConfigTest, RejectsBadInput) {
  auto bad = [](auto edit) {
    auto j = minimal();
    edit(j);
    return j;
  };
  EXPECT_THROW(config_from_json(bad([](json& j) { j["modle"] = json::object(); })), ConfigError);
  EXPECT_THROW(config_from_json(bad([](json& j) { j["model"]["nodez"] = 3; })), ConfigError);
  EXPECT_THROW(config_from_json(bad([](json& j) { j["model"]["placement"] = "grid"; })), ConfigError);
  EXPECT_THROW(config_from_json(bad([](json& j) { j["model"]["nodes"] = "six"; })), ConfigError);
  EXPECT_THROW(config_from_json(bad([](json& j) { j["model"]["nodes"] = 1; })), ConfigError);
  EXPECT_THROW(config_from_json(bad([](json& j) { j["schemes"] = {"baseline9"}; })), ConfigError);
  EXPECT_THROW(config_from_json(bad([](json& j) { j["schemes"] = json::array(); })), ConfigError);
  EXPECT_THROW(config_from_json(bad([](json& j) { j["activity"]["p_avail"] = 0.5; })), ConfigError);
  EXPECT_THROW(config_from_json(bad([](json& j) { j["activity"]["p_unavail"] = 1.5; })), ConfigError);
  EXPECT_THROW(config_from_json(bad([](json& j) { j["schema_version"] = 2; })), ConfigError);
  EXPECT_THROW(config_from_json(bad([](json& j) { j["grid"] = {{{"key", "gain"}, {"start", 0}, {"stop", 1}, {"step", 1}}}; })),
               ConfigError);
  EXPECT_THROW(config_from_json(json::array()), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(GridTest, AxisParsingAndValues) {
  const auto a = parse_grid_axis("p0_db=0:40:5");
  EXPECT_EQ(a.key, "p0_db");
  const auto v = a.values();
  ASSERT_EQ(v.size(), 9u);
  EXPECT_EQ(v.front(), 0.0);
  EXPECT_EQ(v.back(), 40.0);
  // Inclusive stop despite rounding in 0.05 steps.
  EXPECT_EQ(parse_grid_axis("p_unavail=0.05:0.5:0.05").values().size(), 10u);
  EXPECT_TRUE(parse_grid_axis("p0_db=10:0:5").values().empty());
  EXPECT_THROW(parse_grid_axis("p0_db=0:40"), ConfigError);
  EXPECT_THROW(parse_grid_axis("p0_db=0:40:0"), ConfigError);
  EXPECT_THROW(parse_grid_axis("p0_db=a:40:5"), ConfigError);
  EXPECT_THROW(parse_grid_axis("foo=0:1:1"), ConfigError);
  EXPECT_THROW(parse_grid_axis("p0_db"), ConfigError);
}

TEST(GridTest, PointsAreTheCartesianProduct) {
  auto c = config_from_json(minimal());
  EXPECT_EQ(grid_points(c).size(), 1u);
  c.grid = {parse_grid_axis("p0_db=0:10:10"), parse_grid_axis("p_unavail=0.1:0.3:0.1")};
  const auto pts = grid_points(c);
  ASSERT_EQ(pts.size(), 6u);
  EXPECT_EQ(pts[0].first[0].second, 0.0);
  EXPECT_NEAR(pts[2].first[1].second, 0.3, 1e-12);
  EXPECT_DOUBLE_EQ(pts[3].second.p0, 10.0);
  EXPECT_NEAR(pts[4].second.activity.p_avail, 0.8, 1e-12);
  EXPECT_TRUE(pts[4].second.grid.empty());
  c.grid = {parse_grid_axis("p0_db=10:0:1")};
  EXPECT_TRUE(grid_points(c).empty());
  c.grid = {parse_grid_axis("nodes=3:5:1")};
  EXPECT_EQ(grid_points(c)[2].second.model.topology().node_count(), 5u);
}

TEST(ConfigTest, ShippedConfigsLoad) {
  for (const char* name : {"fig5_snr.json", "fig6_activity.json", "fig7_convergence.json"}) {
    const auto c = load_config(std::string(CRELAY_SOURCE_DIR) + "/configs/" + name);
    EXPECT_EQ(c.model.nodes, 6u) << name;
    EXPECT_EQ(c.model.span, 5.0) << name;
  }
  const auto fig5 = load_config(std::string(CRELAY_SOURCE_DIR) + "/configs/fig5_snr.json");
  EXPECT_EQ(grid_points(fig5).size(), 9u);
  EXPECT_EQ(fig5.model.alpha, 2.0);
}

}  // namespace
}  // namespace crelay

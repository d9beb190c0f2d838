#include <cmath>
#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>

#include "lapfov/config.hpp"
#include "lapfov/error.hpp"

namespace lapfov {
namespace {

const std::filesystem::path kScenarios = LAPFOV_SCENARIO_DIR;

void expect_invalid(const std::string& yaml, const std::string& fragment = {}) {
  try {
    parse_scenario_config(yaml);
    ADD_FAILURE() << "accepted:\n" << yaml;
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidConfig);
    if (!fragment.empty()) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  }
}

TEST(ScenarioConfig, EmptyDocumentGivesDefaults) {
  const ScenarioConfig cfg = parse_scenario_config("{}");
  EXPECT_EQ(cfg.gains.ks, Vec4(3e-3, 1.0, 1.0, 1.0));
  EXPECT_EQ(cfg.gains.kr, Vec2(0.5, 0.5));
  EXPECT_EQ(cfg.gains.k_theta, 1.0);
  EXPECT_EQ(cfg.gains.k_d, 0.1);
  EXPECT_EQ(cfg.loss.alpha, 0.85);
  EXPECT_EQ(cfg.loss.mu, 0.8);
  EXPECT_EQ(cfg.loss.lambda, 0.2);
  EXPECT_EQ(cfg.loss.range.min, 1.0);
  EXPECT_EQ(cfg.loss.range.max, 100.0);
  EXPECT_EQ(cfg.viewgen.percentile, 0.95);
  EXPECT_EQ(cfg.viewgen.depth_lo, 8.0);
  EXPECT_EQ(cfg.viewgen.depth_hi, 12.0);
  EXPECT_DOUBLE_EQ(cfg.viewgen.w2, -1.0 / 400.0);
  EXPECT_EQ(cfg.perception, PerceptionMode::kOracle);
  EXPECT_EQ(cfg.mrc, MrcMode::kOff);
  EXPECT_EQ(cfg.dt_s, 0.01);
}

TEST(ScenarioConfig, ReadsNestedSectionsInDisplayUnits) {
  const ScenarioConfig cfg = parse_scenario_config(R"(
name: demo
seed: 9
perception: noisy
mrc: on
camera: {width: 160, height: 120, fx: 130, fy: 131, cx: 79.5, cy: 59.5}
rig: {insertion_mm: 28, pitch_deg: 5, roll_deg: -10}
trajectory:
  kind: waypoints
  waypoints:
    - {t: 0, tip: [0, 0, 40]}
    - {t: 2, tip: [1, 2, 41]}
gains: {ks: [0.01, 2, 2, 2], kr: [0.4, 0.6], k_theta: 0.5, k_d: 0.2}
)");
  EXPECT_EQ(cfg.name, "demo");
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.perception, PerceptionMode::kNoisy);
  EXPECT_EQ(cfg.mrc, MrcMode::kOn);
  EXPECT_EQ(cfg.intrinsics.width, 160);
  EXPECT_EQ(cfg.intrinsics.fy, 131.0);
  EXPECT_NEAR(cfg.rig.pitch, 5.0 * std::numbers::pi / 180.0, 1e-15);
  EXPECT_NEAR(cfg.rig.roll, -10.0 * std::numbers::pi / 180.0, 1e-15);
  EXPECT_EQ(cfg.trajectory.kind, TrajectoryScript::Kind::kWaypoints);
  ASSERT_EQ(cfg.trajectory.waypoints.size(), 2u);
  EXPECT_EQ(cfg.trajectory.waypoints[1].tip, Vec3(1, 2, 41));
  EXPECT_EQ(cfg.gains.kr, Vec2(0.4, 0.6));
  EXPECT_DOUBLE_EQ(cfg.viewgen.w2, -1.0 / 200.0);
}

TEST(ScenarioConfig, UnknownKeysAreRejectedWithTheirLine) {
  expect_invalid("seed: 1\ndurration_s: 5\n", "durration_s");
  expect_invalid("seed: 1\nscene:\n  tool: {tip: [0, 0, 40], colour: red}\n", "line 3");
  expect_invalid("gains: {ks: [1, 1, 1, 1], kq: 3}\n", "kq");
}

TEST(ScenarioConfig, WrongTypesAndShapesAreRejected) {
  expect_invalid("seed: banana\n", "seed");
  expect_invalid("gains: {ks: [1, 1, 1]}\n", "4 entries");
  expect_invalid("scene: 3\n", "mapping");
  expect_invalid("perception: psychic\n");
  expect_invalid("mrc: sometimes\n");
  expect_invalid("trajectory: {kind: zigzag}\n");
  expect_invalid("a: [unclosed\n", "malformed");
}

TEST(ScenarioConfig, OutOfRangeValuesAreRejected) {
  expect_invalid("dt_s: 0\n");
  expect_invalid("duration_s: 0.001\n");
  expect_invalid("gains: {k_d: -1}\n");
  expect_invalid("limits: {max_linear: 0}\n");
  expect_invalid("viewgen: {w2: 0.5}\n");
  expect_invalid("camera: {cx: 400}\n");
}

TEST(ScenarioConfig, MissingFileIsAConfigError) {
  try {
    load_scenario_config(kScenarios / "does_not_exist.yaml");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidConfig);
  }
}

TEST(ScenarioConfig, ShippedScenariosLoad) {
  for (const char* name : {"static.yaml", "spiral.yaml", "waypoints.yaml", "waypoints_noisy.yaml"}) {
    EXPECT_NO_THROW(load_scenario_config(kScenarios / name)) << name;
  }
  EXPECT_NO_THROW(load_depth_eval_config(kScenarios / "depth_eval.yaml"));
}

TEST(DepthEvalConfig, ParsesBandsAndRejectsBadOnes) {
  const DepthEvalConfig cfg =
      parse_depth_eval_config("bands: [[4, 6], [6, 9]]\nplacement_fractions: [0.5]\n");
  ASSERT_EQ(cfg.bands.size(), 2u);
  EXPECT_EQ(cfg.bands[1].hi, 9.0);
  EXPECT_THROW(parse_depth_eval_config("bands: [[6, 4]]\n"), Error);
  EXPECT_THROW(parse_depth_eval_config("placement_fractions: [1.5]\n"), Error);
  EXPECT_THROW(parse_depth_eval_config("bandz: []\n"), Error);
}

}  // namespace
}  // namespace lapfov

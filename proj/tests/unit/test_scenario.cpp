#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "lapfov/config.hpp"
#include "lapfov/error.hpp"
#include "lapfov/scenario.hpp"

namespace lapfov {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

const std::filesystem::path kScenarios = LAPFOV_SCENARIO_DIR;

// Tool tip straight ahead of the laparoscope, 10 mm in front of the lens, in
// the middle of the preferred region.
ScenarioConfig centred_config() {
  ScenarioConfig cfg;
  cfg.name = "centred";
  cfg.scene.tool.tip = Vec3(0.0, 0.0, 40.0);
  cfg.scene.tool.shaft_dir = Vec3(0.0, 0.0, 1.0);
  cfg.trajectory.base = cfg.scene.tool;
  cfg.rig.insertion_mm = 30.0;
  cfg.duration_s = 2.0;
  return cfg;
}

TEST(MisorientationOf, ReferenceAndPureRoll) {
  NlsReference ref;
  ref.camera = Pose(rot_x(0.1) * rot_y(0.2), Vec3(1, 2, 30));
  EXPECT_NEAR(misorientation_of(ref.camera, ref), 0.0, 1e-15);
  const Pose rolled = ref.camera * Pose(rot_z(30.0 * kDeg), Vec3::Zero());
  EXPECT_NEAR(misorientation_of(rolled, ref), 30.0 * kDeg, 1e-12);
}

TEST(MisorientationOf, MatchesAxisAngleProjection) {
  std::mt19937_64 rng(71);
  std::normal_distribution<double> n(0.0, 0.5);
  NlsReference ref;
  ref.camera = Pose(rot_y(0.3), Vec3(0, 0, 30));
  for (int i = 0; i < 200; ++i) {
    const Pose camera(rodrigues(Vec3(n(rng), n(rng), n(rng))) * ref.camera.rotation(),
                      Vec3(n(rng), n(rng), 30.0));
    const Eigen::AngleAxisd aa(ref.camera.rotation().transpose() * camera.rotation());
    EXPECT_NEAR(misorientation_of(camera, ref), aa.angle() * aa.axis().z(), 1e-9);
  }
}

TEST(ClosedLoop, ToolAlreadyAtTargetCommandsNothing) {
  const RunTrace trace = run(centred_config());
  ASSERT_EQ(trace.records.size(), 200u);
  const StepRecord& first = trace.records.front();
  EXPECT_LT(first.errors.e_p.norm(), 1e-9);
  EXPECT_NEAR(first.d_tool, 10.0, 1e-6);
  for (const StepRecord& r : trace.records) {
    ASSERT_LT(r.command.norm(), 1e-9) << "t = " << r.t;
  }
  EXPECT_LT(trace.summary.max_rcm_error, 1e-9);
}

TEST(ClosedLoop, StaticOffsetConvergesWithinThreeSeconds) {
  ScenarioConfig cfg = load_scenario_config(kScenarios / "static.yaml");
  const RunTrace trace = run(cfg);
  ASSERT_FALSE(trace.records.empty());
  const double start = trace.records.front().errors.e_p.norm();
  EXPECT_GT(start, 75.0);
  EXPECT_LT(start, 100.0);
  ASSERT_TRUE(trace.summary.ep_convergence_s.has_value());
  EXPECT_LE(*trace.summary.ep_convergence_s, 3.0);
  EXPECT_LT(trace.summary.max_rcm_error, 1.0);
}

TEST(ClosedLoop, DepthErrorIsCorrectedWithoutDisturbingTheImage) {
  ScenarioConfig cfg = centred_config();
  cfg.scene.tool.tip = Vec3(0.0, 0.0, 46.0);  // 16 mm ahead: e_d = 4 mm
  cfg.trajectory.base = cfg.scene.tool;
  cfg.duration_s = 1.0;
  ClosedLoop loop(cfg);
  const StepRecord first = loop.step();
  EXPECT_NEAR(first.errors.e_d, 4.0, 1e-6);
  Vec2 previous_tip = first.tip_px;
  for (int i = 0; i < 99; ++i) {
    const StepRecord r = loop.step();
    EXPECT_LT((r.tip_px - previous_tip).norm(), 0.1);
    previous_tip = r.tip_px;
    if (i == 98) EXPECT_LT(std::abs(r.errors.e_d), 4.0);
  }
}

TEST(ClosedLoop, SameSeedGivesIdenticalTraces) {
  ScenarioConfig cfg = load_scenario_config(kScenarios / "waypoints_noisy.yaml");
  cfg.duration_s = 3.0;
  const std::string a = trace_csv(run(cfg));
  const std::string b = trace_csv(run(cfg));
  EXPECT_EQ(a, b);
  cfg.seed += 1;
  EXPECT_NE(trace_csv(run(cfg)), a);
}

TEST(ClosedLoop, MrcNeverIncreasesTheRotationalComponent) {
  ScenarioConfig cfg = load_scenario_config(kScenarios / "spiral.yaml");
  cfg.mrc = MrcMode::kOn;
  cfg.duration_s = 4.0;
  const RunTrace trace = run(cfg);
  for (const StepRecord& r : trace.records) {
    ASSERT_LE(std::abs(r.phi_at_star), std::abs(r.phi_at_zero)) << "t = " << r.t;
  }
  EXPECT_EQ(trace.summary.mrc_worsened_steps, 0u);
}

TEST(ClosedLoop, LeavingTheInsertionRangeAborts) {
  ScenarioConfig cfg = centred_config();
  cfg.scene.tool.tip = Vec3(0.0, 0.0, 95.0);  // far away: the camera advances
  cfg.trajectory.base = cfg.scene.tool;
  cfg.scene.background.offset = 120.0;
  cfg.depth_range.max = 200.0;
  cfg.loss.range.max = 200.0;
  cfg.rig.max_insertion_mm = 32.0;
  cfg.duration_s = 10.0;
  try {
    run(cfg);
    FAIL() << "expected the run to abort";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvariantViolation);
  }
}

TEST(ClosedLoop, ResetRestoresTheInitialState) {
  ScenarioConfig cfg = load_scenario_config(kScenarios / "static.yaml");
  ClosedLoop loop(cfg);
  const StepRecord first = loop.step();
  for (int i = 0; i < 50; ++i) loop.step();
  loop.reset(cfg.seed);
  const StepRecord again = loop.step();
  EXPECT_EQ(again.t, first.t);
  EXPECT_EQ(again.errors.e_p, first.errors.e_p);
  EXPECT_EQ(again.camera.matrix(), first.camera.matrix());
}

StepRecord with_v(double t, double v) {
  StepRecord r;
  r.t = t;
  r.v = v;
  return r;
}

TEST(LyapunovCount, CountsRisesAboveTheFloorOnly) {
  std::vector<StepRecord> records{with_v(0, 100), with_v(1, 50), with_v(2, 60), with_v(3, 10),
                                  with_v(4, 10), with_v(5, 0.05), with_v(6, 0.08)};
  // 50 -> 60 rises and 10 -> 10 does not decrease; 0.05 lies below 1e-3 * 100.
  EXPECT_EQ(count_lyapunov_violations(records), 2u);
  EXPECT_EQ(count_lyapunov_violations(records, 0.2), 1u);
  EXPECT_EQ(count_lyapunov_violations({}), 0u);
}

TEST(Summary, SteadyStateAndConvergenceTimes) {
  std::vector<StepRecord> records;
  for (int i = 0; i < 100; ++i) {
    StepRecord r;
    r.t = i * 0.1;
    r.errors.e_p = Vec2(i < 40 ? 30.0 - 0.5 * i : 1.0, 0.0);
    r.errors.e_d = i < 20 ? 5.0 : 0.5;
    r.rcm_error_norm = i == 10 ? 0.3 : 0.01;
    records.push_back(r);
  }
  records[80].errors.e_p = Vec2(0.0, 3.0);
  const RunSummary s = summarize(records, 0.3);
  EXPECT_EQ(s.steps, 100u);
  ASSERT_TRUE(s.ep_convergence_s.has_value());
  EXPECT_NEAR(*s.ep_convergence_s, 4.0, 1e-9);
  ASSERT_TRUE(s.ed_convergence_s.has_value());
  EXPECT_NEAR(*s.ed_convergence_s, 2.0, 1e-9);
  EXPECT_DOUBLE_EQ(s.steady_max_ep, 3.0);
  EXPECT_DOUBLE_EQ(s.steady_max_ed, 0.5);
  EXPECT_DOUBLE_EQ(s.max_rcm_error, 0.3);
}

TEST(TraceCsv, HeaderAndOneRowPerStep) {
  ScenarioConfig cfg = centred_config();
  cfg.duration_s = 0.05;
  const RunTrace trace = run(cfg);
  const std::string csv = trace_csv(trace);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), trace_csv_header());
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 5);
  const std::string header = trace_csv_header();
  EXPECT_EQ(header.rfind("t,e_p_x,e_p_y,e_d,e_r_x,e_r_y,theta_star,V,", 0), 0u);
  EXPECT_NE(header.find("cam_r00"), std::string::npos);
  EXPECT_NE(header.find("cam_tz"), std::string::npos);
}

TEST(DepthEval, EmptyBandsAreFlaggedNotFailed) {
  DepthEvalConfig cfg;
  cfg.placement_fractions.clear();
  const DepthEvalReport report = depth_eval(cfg);
  ASSERT_EQ(report.bands.size(), 3u);
  for (const DepthBandResult& b : report.bands) EXPECT_TRUE(b.empty);
  EXPECT_TRUE(report.overall.empty);
  EXPECT_NE(depth_report_text(report).find("empty"), std::string::npos);
}

TEST(DepthEval, StartingAtTruthGivesNearZeroError) {
  // A full-resolution grid represents the true disparity exactly; the
  // default coarse grid cannot follow the tool silhouette.
  DepthEvalConfig cfg;
  cfg.placement_fractions = {0.5};
  cfg.init_at_truth = true;
  cfg.optimizer.grid_width = cfg.intrinsics.width;
  cfg.optimizer.grid_height = cfg.intrinsics.height;
  cfg.optimizer.iterations = 10;
  const DepthEvalReport report = depth_eval(cfg);
  for (const DepthBandResult& b : report.bands) {
    ASSERT_FALSE(b.empty);
    EXPECT_LT(b.metrics.abs_rel_percent, 1.0) << b.band.lo << "-" << b.band.hi;
  }
}

}  // namespace
}  // namespace lapfov

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "lapfov/error.hpp"
#include "lapfov/perception.hpp"
#include "lapfov/scene.hpp"

namespace lapfov {
namespace {

constexpr double kPi = std::numbers::pi;

Scene plane_only(double distance) {
  Scene s;
  s.background.offset = distance;
  s.tool_present = false;
  return s;
}

// Camera at the origin looking along world +z.
const Pose kLookingDown;

TEST(Render, FrontoParallelPlaneHasConstantDepth) {
  const CameraIntrinsics k;
  const RenderOutput out = render(plane_only(50.0), kLookingDown, k);
  double lo = 1e9, hi = -1e9;
  for (double d : out.depth.values()) {
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  EXPECT_NEAR(lo, 50.0, 1e-9);
  EXPECT_LT(hi - lo, 1e-6);
  EXPECT_EQ(mask_count(out.mask), 0u);
  EXPECT_TRUE(out.image.valid_range());
}

TEST(Render, ToolOnOpticalAxisIsCentred) {
  const CameraIntrinsics k;
  Scene s = plane_only(60.0);
  s.tool_present = true;
  s.tool.tip = Vec3(0.0, 0.0, 30.0);
  s.tool.shaft_dir = Vec3(0.0, 0.0, 1.0);
  const RenderOutput out = render(s, kLookingDown, k);
  ASSERT_GT(mask_count(out.mask), 0u);
  const Vec2 c = mask_centroid(out.mask);
  EXPECT_NEAR(c.x(), k.cx, 1.0);
  EXPECT_NEAR(c.y(), k.cy, 1.0);
}

TEST(Render, CameraFacingAwayIsRejected) {
  const CameraIntrinsics k;
  const Pose backwards(rot_x(kPi), Vec3::Zero());
  try {
    render(plane_only(50.0), backwards, k);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCameraFacingAway);
  }
}

TEST(Render, BackgroundDepthLiesOnPlaneAndMaskIsInFront) {
  const CameraIntrinsics k;
  Scene s;
  s.background.normal = Vec3(0.1, -0.05, 1.0).normalized();
  s.background.offset = 65.0;
  s.tool.tip = Vec3(4.0, -2.0, 40.0);
  s.tool.shaft_dir = Vec3(-0.6, -0.3, 0.74).normalized();
  const Pose camera(rot_x(0.05) * rot_y(-0.04), Vec3(1.0, 2.0, 3.0));
  const RenderOutput out = render(s, camera, k);
  ASSERT_GT(mask_count(out.mask), 20u);

  double worst_plane = 0.0;
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Vec3 ray((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
      const Vec3 origin = camera.translation();
      const Vec3 dir = camera.rotate(ray);
      const double plane_z = (s.background.offset - s.background.normal.dot(origin)) /
                             s.background.normal.dot(dir);
      const double d = out.depth.at(x, y);
      if (mask_set(out.mask, x, y)) {
        EXPECT_LT(d, plane_z);
        continue;
      }
      if (d < plane_z - 1e-6) continue;  // the shaft beyond the tip region
      const Vec3 world = origin + dir * d;
      worst_plane = std::max(worst_plane, std::abs(s.background.normal.dot(world) -
                                                   s.background.offset));
    }
  }
  EXPECT_LT(worst_plane, 1e-6);
}

TEST(Render, IsBitIdenticalAcrossCalls) {
  const CameraIntrinsics k;
  Scene s;
  s.tool.tip = Vec3(3.0, 1.0, 40.0);
  s.tool.shaft_dir = Vec3(-0.5, 0.2, 0.8).normalized();
  const RenderOutput a = render(s, kLookingDown, k);
  const RenderOutput b = render(s, kLookingDown, k);
  EXPECT_EQ(a.image.data(), b.image.data());
  EXPECT_EQ(a.depth.values(), b.depth.values());
  EXPECT_EQ(a.mask.data(), b.mask.data());

  const RenderOutput g = render_geometry(s, kLookingDown, k);
  EXPECT_EQ(a.depth.values(), g.depth.values());
  EXPECT_EQ(a.mask.data(), g.mask.data());

  const RenderOutput roi = render_tip_region(s, kLookingDown, k);
  EXPECT_EQ(a.mask.data(), roi.mask.data());
  for (std::size_t i = 0; i < a.depth.size(); ++i) {
    if (a.mask.data()[i] > 0.5) EXPECT_EQ(a.depth[i], roi.depth[i]);
  }
}

TEST(Render, RollAboutOpticalAxisIsAPixelRotation) {
  CameraIntrinsics k;
  const Scene s = plane_only(50.0);
  const Pose source = kLookingDown;
  const Pose target(rot_z(0.3), Vec3::Zero());
  const RenderOutput src = render(s, source, k);
  const RenderOutput tgt = render(s, target, k);
  const WarpResult w = warp_image(src.image, tgt.depth, source.inverse() * target, k);
  ASSERT_GT(w.valid_count, tgt.image.pixel_count() / 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < w.valid.size(); ++i) {
    if (w.valid[i]) sum += std::abs(w.warped.data()[i] - tgt.image.data()[i]);
  }
  EXPECT_LT(sum / w.valid_count, 0.02);
}

TEST(ToolAt, StaticKindIsConstant) {
  TrajectoryScript script;
  script.base.tip = Vec3(1.0, 2.0, 40.0);
  for (double t : {0.0, 1.0, 123.4}) {
    EXPECT_EQ(tool_at(script, t).tip, script.base.tip);
  }
}

TEST(ToolAt, SpiralRadiusAndAngleFollowTheParametrisation) {
  TrajectoryScript script;
  script.kind = TrajectoryScript::Kind::kSpiral;
  script.base.tip = Vec3(1.0, -1.0, 40.0);
  script.pitch_mm_per_rev = 2.0;
  script.rate_rev_per_s = 0.5;
  const Vec3 d = tool_at(script, 2.0).tip - script.base.tip;
  EXPECT_NEAR(d.head<2>().norm(), 2.0, 1e-12);
  EXPECT_NEAR(std::atan2(d.y(), d.x()), 0.0, 1e-9);  // angle 2 pi
  EXPECT_NEAR(d.z(), 0.0, 1e-12);
  const Vec3 q = tool_at(script, 1.5).tip - script.base.tip;  // 0.75 rev
  EXPECT_NEAR(q.head<2>().norm(), 1.5, 1e-12);
  EXPECT_NEAR(std::atan2(q.y(), q.x()), -kPi / 2.0, 1e-9);
}

TEST(ToolAt, WaypointMidpointAndHold) {
  TrajectoryScript script;
  script.kind = TrajectoryScript::Kind::kWaypoints;
  script.waypoints = {{0.0, Vec3(0, 0, 40)}, {2.0, Vec3(4, -2, 44)}, {3.0, Vec3(4, 0, 44)}};
  EXPECT_LT((tool_at(script, 1.0).tip - Vec3(2, -1, 42)).norm(), 1e-12);
  EXPECT_LT((tool_at(script, 2.5).tip - Vec3(4, -1, 44)).norm(), 1e-12);
  EXPECT_LT((tool_at(script, 10.0).tip - Vec3(4, 0, 44)).norm(), 1e-12);
}

TEST(ToolAt, StepJumpsAtItsTime) {
  TrajectoryScript script;
  script.kind = TrajectoryScript::Kind::kStep;
  script.base.tip = Vec3(0, 0, 40);
  script.step_offset = Vec3(3, 0, 0);
  script.step_time = 1.0;
  EXPECT_EQ(tool_at(script, 0.99).tip, Vec3(0, 0, 40));
  EXPECT_EQ(tool_at(script, 1.0).tip, Vec3(3, 0, 40));
}

TEST(ToolState, ValidationChecksRadiusAndDirection) {
  ToolState t;
  EXPECT_NO_THROW(t.validate());
  t.radius = 0.0;
  EXPECT_THROW(t.validate(), Error);
  t = ToolState{};
  t.shaft_dir = Vec3(0.0, 0.0, 2.0);
  EXPECT_THROW(t.validate(), Error);
}

}  // namespace
}  // namespace lapfov

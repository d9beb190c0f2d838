#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lapfov/geometry.hpp"
#include "lapfov/image.hpp"

namespace lapfov {

/// Background tissue surface n·p = offset (world frame, mm).
struct Plane {
  Vec3 normal = Vec3(0.0, 0.0, 1.0);
  double offset = 70.0;
};

/// Seeded multi-octave value noise. `cell_mm` is the lattice spacing of the
/// coarsest octave on the background; the instrument uses `tool_cell_mm`.
struct TextureParams {
  std::uint64_t seed = 7;
  double cell_mm = 3.0;
  double tool_cell_mm = 1.0;
  int octaves = 4;
  double gain = 0.5;
};

/// Instrument modelled as a capped cylinder starting at `tip` and extending
/// along `shaft_dir`.
struct ToolState {
  Vec3 tip = Vec3(0.0, 0.0, 45.0);
  Vec3 shaft_dir = Vec3(0.0, 0.0, 1.0);
  double radius = 2.5;

  void validate() const;
};

struct Scene {
  Plane background;
  TextureParams texture;
  ToolState tool;
  Vec3 trocar = Vec3::Zero();
  double tip_region_mm = 10.0;
  double tool_length_mm = 300.0;
  bool tool_present = true;
};

struct RenderOutput {
  ImageBuffer image;  // intensity, 1 channel
  DepthMap depth;     // camera z depth, mm
  ImageBuffer mask;   // 1 where the tip region is the nearest surface
};

/// Camera pose maps camera coordinates to world coordinates.
RenderOutput render(const Scene& scene, const Pose& camera,
                    const CameraIntrinsics& k,
                    const DepthRange& range = {});

/// Depth and mask only; skips texture evaluation. Bit-identical to the
/// corresponding fields of `render`.
RenderOutput render_geometry(const Scene& scene, const Pose& camera,
                             const CameraIntrinsics& k,
                             const DepthRange& range = {});

/// Mask and depth traced only inside a window bounding the tip region. The
/// mask equals that of `render`; depth is exact wherever the mask is set and
/// D_max elsewhere outside the window.
RenderOutput render_tip_region(const Scene& scene, const Pose& camera,
                               const CameraIntrinsics& k,
                               const DepthRange& range = {});

/// RGB visualisation of a render: tissue tinted red, instrument neutral.
ImageBuffer colorize(const RenderOutput& frame);

/// Texture value in [0, 1] at a point of 3D texture space.
double value_noise(const Vec3& p, const TextureParams& params,
                   std::uint64_t stream = 0);

struct Waypoint {
  double time = 0.0;
  Vec3 tip = Vec3::Zero();
};

struct TrajectoryScript {
  enum class Kind { kStatic, kStep, kSpiral, kWaypoints };

  Kind kind = Kind::kStatic;
  ToolState base;

  // kStep
  Vec3 step_offset = Vec3::Zero();
  double step_time = 0.0;

  // kSpiral: Archimedean spiral around base.tip in the world x-y plane.
  double pitch_mm_per_rev = 2.0;
  double rate_rev_per_s = 0.5;
  double phase = 0.0;

  // kWaypoints, linear interpolation, held at both ends.
  std::vector<Waypoint> waypoints;

  void validate() const;
};

ToolState tool_at(const TrajectoryScript& script, double t);

}  // namespace lapfov

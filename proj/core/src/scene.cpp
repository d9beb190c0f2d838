#include "lapfov/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lapfov/error.hpp"

namespace lapfov {

void ToolState::validate() const {
  if (std::abs(shaft_dir.norm() - 1.0) > 1e-9) {
    fail(ErrorCode::kInvalidArgument, "tool shaft direction must be unit length");
  }
  if (!(radius > 0.0)) fail(ErrorCode::kInvalidArgument, "tool radius must be positive");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double lattice_value(std::int64_t ix, std::int64_t iy, std::int64_t iz,
                     std::uint64_t salt) {
  std::uint64_t h = splitmix64(salt);
  h = splitmix64(h ^ static_cast<std::uint64_t>(ix));
  h = splitmix64(h ^ static_cast<std::uint64_t>(iy));
  h = splitmix64(h ^ static_cast<std::uint64_t>(iz));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double lerp(double a, double b, double t) { return a + (b - a) * t; }

double lattice_noise(const Vec3& p, std::uint64_t salt) {
  const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  const auto iz = static_cast<std::int64_t>(fz);
  const double tx = fade(p.x() - fx), ty = fade(p.y() - fy), tz = fade(p.z() - fz);
  double c[2][2][2];
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        c[dz][dy][dx] = lattice_value(ix + dx, iy + dy, iz + dz, salt);
  const double x00 = lerp(c[0][0][0], c[0][0][1], tx);
  const double x10 = lerp(c[0][1][0], c[0][1][1], tx);
  const double x01 = lerp(c[1][0][0], c[1][0][1], tx);
  const double x11 = lerp(c[1][1][0], c[1][1][1], tx);
  return lerp(lerp(x00, x10, ty), lerp(x01, x11, ty), tz);
}

struct ToolFrame {
  Vec3 axis;
  Vec3 e1;
  Vec3 e2;
};

ToolFrame tool_frame(const ToolState& tool) {
  ToolFrame f;
  f.axis = tool.shaft_dir;
  const Vec3 ref = std::abs(f.axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  f.e1 = f.axis.cross(ref).normalized();
  f.e2 = f.axis.cross(f.e1);
  return f;
}

enum class Surface { kNone, kPlane, kTool };

struct Hit {
  double depth = std::numeric_limits<double>::infinity();
  Surface surface = Surface::kNone;
  double along_shaft = 0.0;
  Vec3 normal = Vec3::Zero();
};

// Nearest intersection with the capped cylinder, parameterised so that the
// ray parameter equals camera z depth (direction has unit camera z).
void intersect_tool(const Scene& scene, const ToolFrame& frame, const Vec3& origin,
                    const Vec3& dir, Hit& best) {
  const ToolState& tool = scene.tool;
  const Vec3 w = origin - tool.tip;
  const double wa = w.dot(frame.axis);
  const double da = dir.dot(frame.axis);
  const Vec3 w_perp = w - wa * frame.axis;
  const Vec3 d_perp = dir - da * frame.axis;
  const double r2 = tool.radius * tool.radius;

  const double a = d_perp.squaredNorm();
  const double b = 2.0 * d_perp.dot(w_perp);
  const double c = w_perp.squaredNorm() - r2;
  if (c > 0.0 && a > 1e-18) {
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double lambda = (-b - std::sqrt(disc)) / (2.0 * a);
      const double s = wa + lambda * da;
      if (lambda > 0.0 && lambda < best.depth && s >= 0.0 &&
          s <= scene.tool_length_mm) {
        best.depth = lambda;
        best.surface = Surface::kTool;
        best.along_shaft = s;
        best.normal = (w_perp + lambda * d_perp) / tool.radius;
      }
    }
  }
  if (std::abs(da) > 1e-12) {
    for (const double cap_s : {0.0, scene.tool_length_mm}) {
      const double lambda = (cap_s - wa) / da;
      if (!(lambda > 0.0 && lambda < best.depth)) continue;
      const Vec3 radial = w_perp + lambda * d_perp;
      if (radial.squaredNorm() <= r2) {
        best.depth = lambda;
        best.surface = Surface::kTool;
        best.along_shaft = cap_s;
        best.normal = cap_s == 0.0 ? Vec3(-frame.axis) : frame.axis;
      }
    }
  }
}

void intersect_plane(const Plane& plane, const Vec3& origin, const Vec3& dir,
                     Hit& best) {
  const double denom = plane.normal.dot(dir);
  if (std::abs(denom) < 1e-12) return;
  const double lambda = (plane.offset - plane.normal.dot(origin)) / denom;
  if (lambda > 0.0 && lambda < best.depth) {
    best.depth = lambda;
    best.surface = Surface::kPlane;
    best.normal = plane.normal;
  }
}

struct PixelWindow {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
};

// Pixel window guaranteed to contain the projection of the tip region: the
// image of its bounding box when that box lies in front of the camera.
PixelWindow tip_window(const Scene& scene, const Pose& camera, const CameraIntrinsics& k) {
  const PixelWindow full{0, 0, k.width, k.height};
  if (!scene.tool_present) return {0, 0, 0, 0};
  const ToolFrame frame = tool_frame(scene.tool);
  const Pose world_to_camera = camera.inverse();
  double min_u = std::numeric_limits<double>::infinity(), max_u = -min_u;
  double min_v = min_u, max_v = -min_u;
  for (const double s : {0.0, scene.tip_region_mm}) {
    for (const double a : {-1.0, 1.0}) {
      for (const double b : {-1.0, 1.0}) {
        const Vec3 corner = scene.tool.tip + s * frame.axis +
                            scene.tool.radius * (a * frame.e1 + b * frame.e2);
        const Vec3 pc = world_to_camera.transform(corner);
        if (!(pc.z() > 1e-6)) return full;
        const double u = k.fx * pc.x() / pc.z() + k.cx;
        const double v = k.fy * pc.y() / pc.z() + k.cy;
        min_u = std::min(min_u, u);
        max_u = std::max(max_u, u);
        min_v = std::min(min_v, v);
        max_v = std::max(max_v, v);
      }
    }
  }
  auto clamp_to = [](double v, int hi) {
    return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(hi)));
  };
  return {clamp_to(std::floor(min_u) - 1.0, k.width), clamp_to(std::floor(min_v) - 1.0, k.height),
          clamp_to(std::ceil(max_u) + 2.0, k.width), clamp_to(std::ceil(max_v) + 2.0, k.height)};
}

RenderOutput render_impl(const Scene& scene, const Pose& camera,
                         const CameraIntrinsics& k, const DepthRange& range,
                         bool shade, const PixelWindow* window = nullptr) {
  k.validate();
  if (scene.tool_present) scene.tool.validate();
  const Mat3& rot = camera.rotation();
  const Vec3 origin = camera.translation();
  const Vec3 axis = rot.col(2);
  {
    const double denom = scene.background.normal.dot(axis);
    const double lambda =
        std::abs(denom) < 1e-12
            ? -1.0
            : (scene.background.offset - scene.background.normal.dot(origin)) / denom;
    if (!(lambda > 0.0)) {
      fail(ErrorCode::kCameraFacingAway, "optical axis does not meet the background plane");
    }
  }

  RenderOutput out{ImageBuffer(k.width, k.height, 1), DepthMap(k.width, k.height),
                   ImageBuffer(k.width, k.height, 1)};
  const ToolFrame frame = tool_frame(scene.tool);
  const Vec3 light = Vec3(0.2, -0.3, -1.0).normalized();
  const double inv_fx = 1.0 / k.fx, inv_fy = 1.0 / k.fy;

  const PixelWindow area = window ? *window : PixelWindow{0, 0, k.width, k.height};
  if (window) out.depth.values().assign(out.depth.size(), range.max);
  for (int y = area.y0; y < area.y1; ++y) {
    const double ny = (y - k.cy) * inv_fy;
    for (int x = area.x0; x < area.x1; ++x) {
      const double nx = (x - k.cx) * inv_fx;
      const Vec3 dir = rot.col(0) * nx + rot.col(1) * ny + axis;
      Hit hit;
      intersect_plane(scene.background, origin, dir, hit);
      if (scene.tool_present) intersect_tool(scene, frame, origin, dir, hit);

      const bool tool_hit = hit.surface == Surface::kTool;
      out.depth.at(x, y) = hit.surface == Surface::kNone
                               ? range.max
                               : std::clamp(hit.depth, range.min, range.max);
      out.mask.at(x, y) =
          tool_hit && hit.along_shaft <= scene.tip_region_mm ? 1.0 : 0.0;
      if (!shade || hit.surface == Surface::kNone) continue;

      const Vec3 p = origin + hit.depth * dir;
      double intensity = 0.0;
      if (tool_hit) {
        const Vec3 rel = p - scene.tool.tip;
        const Vec3 local(rel.dot(frame.e1), rel.dot(frame.e2), hit.along_shaft);
        TextureParams tool_texture = scene.texture;
        tool_texture.cell_mm = scene.texture.tool_cell_mm;
        const double albedo = 0.3 + 0.55 * value_noise(local, tool_texture, 1);
        const double lambert = std::abs(hit.normal.normalized().dot(light));
        intensity = albedo * (0.55 + 0.45 * lambert);
      } else {
        intensity = 0.12 + 0.78 * value_noise(p, scene.texture, 0);
      }
      out.image.at(x, y) = std::clamp(intensity, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace

double value_noise(const Vec3& p, const TextureParams& params,
                   std::uint64_t stream) {
  double sum = 0.0, norm = 0.0, amplitude = 1.0;
  double scale = 1.0 / params.cell_mm;
  for (int octave = 0; octave < params.octaves; ++octave) {
    const std::uint64_t salt =
        params.seed * 0x100000001B3ULL + stream * 0x1000 + static_cast<std::uint64_t>(octave);
    sum += amplitude * lattice_noise(p * scale, salt);
    norm += amplitude;
    amplitude *= params.gain;
    scale *= 2.0;
  }
  return norm > 0.0 ? sum / norm : 0.0;
}

RenderOutput render(const Scene& scene, const Pose& camera,
                    const CameraIntrinsics& k, const DepthRange& range) {
  return render_impl(scene, camera, k, range, true);
}

RenderOutput render_geometry(const Scene& scene, const Pose& camera,
                             const CameraIntrinsics& k, const DepthRange& range) {
  return render_impl(scene, camera, k, range, false);
}

RenderOutput render_tip_region(const Scene& scene, const Pose& camera,
                               const CameraIntrinsics& k, const DepthRange& range) {
  k.validate();
  const PixelWindow window = tip_window(scene, camera, k);
  return render_impl(scene, camera, k, range, false, &window);
}

ImageBuffer colorize(const RenderOutput& frame) {
  const ImageBuffer& gray = frame.image;
  ImageBuffer rgb(gray.width(), gray.height(), 3);
  for (int y = 0; y < gray.height(); ++y) {
    for (int x = 0; x < gray.width(); ++x) {
      const double g = gray.at(x, y);
      const bool tool = mask_set(frame.mask, x, y);
      rgb.at(x, y, 0) = std::min(1.0, tool ? g * 0.9 : g * 1.05);
      rgb.at(x, y, 1) = tool ? g * 0.95 : g * 0.55;
      rgb.at(x, y, 2) = std::min(1.0, tool ? g * 1.1 : g * 0.5);
    }
  }
  return rgb;
}

void TrajectoryScript::validate() const {
  base.validate();
  switch (kind) {
    case Kind::kStatic:
    case Kind::kStep:
      break;
    case Kind::kSpiral:
      if (!(pitch_mm_per_rev >= 0.0) || !(rate_rev_per_s >= 0.0)) {
        fail(ErrorCode::kInvalidConfig, "spiral pitch and rate must be nonnegative");
      }
      break;
    case Kind::kWaypoints:
      if (waypoints.empty()) fail(ErrorCode::kInvalidConfig, "waypoint list is empty");
      for (std::size_t i = 1; i < waypoints.size(); ++i) {
        if (!(waypoints[i].time > waypoints[i - 1].time)) {
          fail(ErrorCode::kInvalidConfig, "waypoint times must increase");
        }
      }
      break;
  }
}

ToolState tool_at(const TrajectoryScript& script, double t) {
  ToolState state = script.base;
  switch (script.kind) {
    case TrajectoryScript::Kind::kStatic:
      break;
    case TrajectoryScript::Kind::kStep:
      if (t >= script.step_time) state.tip += script.step_offset;
      break;
    case TrajectoryScript::Kind::kSpiral: {
      const double revs = script.rate_rev_per_s * t;
      const double radius = script.pitch_mm_per_rev * revs;
      const double angle = 2.0 * M_PI * revs + script.phase;
      state.tip += Vec3(radius * std::cos(angle), radius * std::sin(angle), 0.0);
      break;
    }
    case TrajectoryScript::Kind::kWaypoints: {
      const auto& wps = script.waypoints;
      if (t <= wps.front().time) {
        state.tip = wps.front().tip;
      } else if (t >= wps.back().time) {
        state.tip = wps.back().tip;
      } else {
        const auto next = std::upper_bound(
            wps.begin(), wps.end(), t,
            [](double value, const Waypoint& w) { return value < w.time; });
        const auto prev = next - 1;
        const double u = (t - prev->time) / (next->time - prev->time);
        state.tip = prev->tip + u * (next->tip - prev->tip);
      }
      break;
    }
  }
  return state;
}

}  // namespace lapfov

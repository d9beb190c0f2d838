#include "lapfov/mrc.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "lapfov/error.hpp"

namespace lapfov {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kGoldenTolerance = 1e-4;

double phi_at(const NlsReference& reference, const Pose& current, double theta,
              const CameraIntrinsics& k, const Vec2& anchor_px,
              std::optional<double> anchor_depth) {
  return misorientation_angle(
      estimate_affine(reference, current, theta, k, anchor_px, anchor_depth));
}

}  // namespace

AffineMap estimate_affine(const NlsReference& reference, const Pose& current, double theta,
                          const CameraIntrinsics& k, const Vec2& anchor_px,
                          std::optional<double> anchor_depth) {
  const double depth = anchor_depth.value_or(reference.plane_depth_mm);
  if (!(depth > 0.0)) {
    fail(ErrorCode::kDegenerateHomography, "anchor plane is behind the current camera");
  }
  const Pose rotated = current * Pose(rot_z(theta), Vec3::Zero());
  const Pose rotated_to_ref = reference.camera.inverse() * rotated;
  const Mat3& r = rotated_to_ref.rotation();
  const Vec3& t = rotated_to_ref.translation();

  // The anchor's 3D point, expressed in the rotated view.
  const Vec3 point_current(depth * (anchor_px.x() - k.cx) / k.fx,
                           depth * (anchor_px.y() - k.cy) / k.fy, depth);
  const Vec3 point = rot_z(theta).transpose() * point_current;
  if (!(rotated_to_ref.transform(point).z() > 0.0)) {
    fail(ErrorCode::kDegenerateHomography, "anchor plane is behind the reference camera");
  }

  const Mat3 kmat = k.matrix();
  const Mat3 h = kmat * (r + t * Vec3(0.0, 0.0, 1.0 / depth).transpose()) * kmat.inverse();
  const Vec2 a(k.fx * point.x() / point.z() + k.cx, k.fy * point.y() / point.z() + k.cy);
  const Vec3 ha = h * Vec3(a.x(), a.y(), 1.0);
  if (!(std::abs(ha.z()) > 1e-12)) {
    fail(ErrorCode::kDegenerateHomography, "anchor maps to infinity");
  }
  const Vec2 mapped = ha.head<2>() / ha.z();

  AffineMap out;
  out.a = (h.topLeftCorner<2, 2>() - mapped * h.block<1, 2>(2, 0)) / ha.z();
  out.t = mapped - a;
  return out;
}

double misorientation_angle(const AffineMap& map) {
  const double det = map.a.determinant();
  if (!(std::abs(det) > 1e-12)) fail(ErrorCode::kSingularAffine, "affine map is singular");
  if (det < 0.0) fail(ErrorCode::kReflectionDetected, "affine map contains a reflection");
  const Svd2 svd = svd2x2(map.a);
  const Mat2 rotation = svd.u * svd.v.transpose();
  return std::atan2(rotation(1, 0), rotation(0, 0));
}

ThetaSearch search_theta_star(const NlsReference& reference, const Pose& current,
                              const CameraIntrinsics& k, const Vec2& anchor_px,
                              std::optional<double> anchor_depth) {
  auto cost = [&](double theta) {
    return std::abs(phi_at(reference, current, theta, k, anchor_px, anchor_depth));
  };

  ThetaSearch out;
  out.phi_at_zero = phi_at(reference, current, 0.0, k, anchor_px, anchor_depth);
  double best_theta = 0.0;
  double best_cost = std::abs(out.phi_at_zero);
  for (int i = -180; i < 180; ++i) {
    const double theta = i * kDeg;
    const double c = i == 0 ? std::abs(out.phi_at_zero) : cost(theta);
    // Strict comparison keeps the smallest theta on ties.
    if (c < best_cost || (c == best_cost && theta < best_theta)) {
      best_cost = c;
      best_theta = theta;
    }
  }

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = best_theta - kDeg, hi = best_theta + kDeg;
  double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
  double f1 = cost(x1), f2 = cost(x2);
  while (hi - lo > kGoldenTolerance) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = cost(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = cost(x2);
    }
  }
  const double refined = 0.5 * (lo + hi);
  const double refined_cost = cost(refined);
  if (refined_cost <= best_cost) {
    best_theta = refined;
    best_cost = refined_cost;
  }
  // Angles wrap: keep theta* in [-pi, pi).
  best_theta = std::remainder(best_theta, 2.0 * std::numbers::pi);
  if (best_theta >= std::numbers::pi) best_theta -= 2.0 * std::numbers::pi;
  out.theta_star = best_theta;
  out.phi_at_star = phi_at(reference, current, best_theta, k, anchor_px, anchor_depth);
  return out;
}

double solve_theta_star(const NlsReference& reference, const Pose& current,
                        const CameraIntrinsics& k, const Vec2& anchor_px,
                        std::optional<double> anchor_depth) {
  return search_theta_star(reference, current, k, anchor_px, anchor_depth).theta_star;
}

void write_phi_curve(const std::filesystem::path& path, const NlsReference& reference,
                     const Pose& current, const CameraIntrinsics& k, const Vec2& anchor_px,
                     std::optional<double> anchor_depth, int samples) {
  if (samples < 2) fail(ErrorCode::kInvalidArgument, "need at least two samples");
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot open " + path.string());
  out.precision(12);
  out << "# theta_rad phi_rad\n";
  for (int i = 0; i < samples; ++i) {
    const double theta = -std::numbers::pi + 2.0 * std::numbers::pi * i / (samples - 1);
    out << theta << ' ' << phi_at(reference, current, theta, k, anchor_px, anchor_depth)
        << '\n';
  }
}

}  // namespace lapfov

#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "lapfov/geometry.hpp"

namespace lapfov {

/// Local affine model p_ref = A p + t of the image map from a view to the
/// reference view.
struct AffineMap {
  Mat2 a = Mat2::Identity();
  /// Image displacement of the anchor pixel.
  Vec2 t = Vec2::Zero();
};

/// Natural line-of-sight reference captured at setup time.
struct NlsReference {
  Pose camera;
  double plane_depth_mm = 40.0;
};

/// Linearises the plane-induced homography from the view `current ∘ Rz(theta)`
/// to the reference view at the anchor. The plane is fronto-parallel in the
/// current view at `anchor_depth` (defaults to the reference plane depth);
/// `anchor_px` is a pixel of the current, un-rotated view.
AffineMap estimate_affine(const NlsReference& reference, const Pose& current, double theta,
                          const CameraIntrinsics& k, const Vec2& anchor_px,
                          std::optional<double> anchor_depth = std::nullopt);

/// Rotation angle of the polar factor U V^T of A, counter-clockwise positive
/// in pixel coordinates.
double misorientation_angle(const AffineMap& map);

struct ThetaSearch {
  double theta_star = 0.0;
  double phi_at_zero = 0.0;
  double phi_at_star = 0.0;
};

/// Argmin over theta of |phi|: a 1 degree grid over [-pi, pi) followed by a
/// golden-section refinement on the bracketing +-1 degree interval.
ThetaSearch search_theta_star(const NlsReference& reference, const Pose& current,
                              const CameraIntrinsics& k, const Vec2& anchor_px,
                              std::optional<double> anchor_depth = std::nullopt);

double solve_theta_star(const NlsReference& reference, const Pose& current,
                        const CameraIntrinsics& k, const Vec2& anchor_px,
                        std::optional<double> anchor_depth = std::nullopt);

/// phi(theta) samples for plotting, written as "theta phi" lines (radians).
void write_phi_curve(const std::filesystem::path& path, const NlsReference& reference,
                     const Pose& current, const CameraIntrinsics& k, const Vec2& anchor_px,
                     std::optional<double> anchor_depth = std::nullopt,
                     int samples = 721);

}  // namespace lapfov

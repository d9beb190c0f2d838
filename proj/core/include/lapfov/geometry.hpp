#pragma once

#include <Eigen/Dense>

namespace lapfov {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Plausible depth band for the scene, in millimetres. Shared by the
/// backprojection range check and the disparity-to-depth mapping.
struct DepthRange {
  double min = 1.0;
  double max = 100.0;
};

/// Rigid transform (rotation + translation in mm). Reads as "the pose of a
/// child frame in a parent frame": `transform(p)` maps child coordinates to
/// parent coordinates.
class Pose {
 public:
  Pose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  Pose(const Mat3& rotation, const Vec3& translation);

  static Pose Identity() { return Pose(); }
  static Pose FromMatrix(const Mat4& m);
  /// Builds from a row-major 3x4 [R|t] as stored in pose files.
  static Pose FromRowMajor12(const double* values);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 transform(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 rotate(const Vec3& v) const { return rotation_ * v; }

  Pose inverse() const;
  Pose operator*(const Pose& other) const;

  Mat4 matrix() const;
  void to_row_major12(double* out) const;

  /// Max-abs entry of R^T R - I.
  double orthonormality_error() const;

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

/// a ∘ b, with rotation renormalization once drift exceeds 1e-9.
Pose compose(const Pose& a, const Pose& b);

/// Nearest rotation (polar projection) to an arbitrary 3x3 matrix.
Mat3 project_to_rotation(const Mat3& m);

Mat3 skew(const Vec3& v);

/// Exponential map of a rotation vector (axis * angle).
Mat3 rodrigues(const Vec3& rotation_vector);

/// Inverse of `rodrigues`; the returned angle lies in [0, pi].
Vec3 rotation_log(const Mat3& r);

Mat3 rot_x(double angle);
Mat3 rot_y(double angle);
Mat3 rot_z(double angle);
Mat2 rot2(double angle);

struct CameraIntrinsics {
  double fx = 260.0;
  double fy = 260.0;
  double cx = 159.5;
  double cy = 119.5;
  int width = 320;
  int height = 240;

  void validate() const;
  Mat3 matrix() const;
  /// Intrinsics of the image downsampled by 2x2 averaging `levels` times.
  CameraIntrinsics downsampled(int levels) const;
  bool contains(const Vec2& px) const;
};

/// Pinhole projection, camera convention +z forward, +x right, +y down.
Vec2 project(const CameraIntrinsics& k, const Vec3& point);

Vec3 backproject(const CameraIntrinsics& k, const Vec2& pixel, double depth,
                 const DepthRange& range = {});

/// 2x2 singular value decomposition A = U diag(s) V^T with s descending and
/// nonnegative. Closed form, exact up to rounding for any finite A.
struct Svd2 {
  Mat2 u;
  Vec2 singular_values;
  Mat2 v;

  Mat2 reconstruct() const;
};

Svd2 svd2x2(const Mat2& a);

}  // namespace lapfov

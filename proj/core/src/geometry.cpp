#include "lapfov/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "lapfov/error.hpp"

namespace lapfov {

namespace {

constexpr double kDriftTolerance = 1e-9;

}  // namespace

Pose::Pose(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {}

Pose Pose::FromMatrix(const Mat4& m) {
  return Pose(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
}

Pose Pose::FromRowMajor12(const double* values) {
  Mat3 r;
  Vec3 t;
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 3; ++col) r(row, col) = values[row * 4 + col];
    t(row) = values[row * 4 + 3];
  }
  return Pose(r, t);
}

Pose Pose::inverse() const {
  const Mat3 rt = rotation_.transpose();
  return Pose(rt, -rt * translation_);
}

Pose Pose::operator*(const Pose& other) const {
  return Pose(rotation_ * other.rotation_,
              rotation_ * other.translation_ + translation_);
}

Mat4 Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

void Pose::to_row_major12(double* out) const {
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 3; ++col) out[row * 4 + col] = rotation_(row, col);
    out[row * 4 + 3] = translation_(row);
  }
}

double Pose::orthonormality_error() const {
  return (rotation_.transpose() * rotation_ - Mat3::Identity())
      .cwiseAbs()
      .maxCoeff();
}

Pose compose(const Pose& a, const Pose& b) {
  Pose out = a * b;
  if (out.orthonormality_error() > kDriftTolerance) {
    out = Pose(project_to_rotation(out.rotation()), out.translation());
  }
  return out;
}

Mat3 project_to_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) = -u.col(2);
  return u * v.transpose();
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return s;
}

Mat3 rodrigues(const Vec3& rotation_vector) {
  const double angle = rotation_vector.norm();
  const Mat3 k = skew(rotation_vector);
  if (angle < 1e-8) {
    // Second-order Taylor expansion keeps this smooth near zero.
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double a = std::sin(angle) / angle;
  const double b = (1.0 - std::cos(angle)) / (angle * angle);
  return Mat3::Identity() + a * k + b * k * k;
}

Vec3 rotation_log(const Mat3& r) {
  const double cos_angle = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double angle = std::acos(cos_angle);
  const Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (angle < 1e-8) return 0.5 * w;
  if (M_PI - angle > 1e-6) return w * (angle / (2.0 * std::sin(angle)));
  // Near pi the antisymmetric part vanishes; read the axis from R + I.
  const Mat3 b = 0.5 * (r + Mat3::Identity());
  int best = 0;
  for (int i = 1; i < 3; ++i) {
    if (b(i, i) > b(best, best)) best = i;
  }
  Vec3 axis = b.col(best) / std::sqrt(std::max(b(best, best), 1e-300));
  axis.normalize();
  if (axis.dot(w) < 0.0) axis = -axis;
  return axis * angle;
}

Mat3 rot_x(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

Mat3 rot_y(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

Mat3 rot_z(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

Mat2 rot2(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat2 r;
  r << c, -s, s, c;
  return r;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    fail(ErrorCode::kInvalidArgument, "image size must be positive");
  }
  if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
    fail(ErrorCode::kInvalidArgument, "principal point outside the image");
  }
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

CameraIntrinsics CameraIntrinsics::downsampled(int levels) const {
  CameraIntrinsics out = *this;
  for (int i = 0; i < levels; ++i) {
    out.fx *= 0.5;
    out.fy *= 0.5;
    // Pixel centres sit at integer coordinates; a 2x2 block (2i, 2i+1)
    // averages to coarse pixel i.
    out.cx = (out.cx + 0.5) * 0.5 - 0.5;
    out.cy = (out.cy + 0.5) * 0.5 - 0.5;
    out.width /= 2;
    out.height /= 2;
  }
  return out;
}

bool CameraIntrinsics::contains(const Vec2& px) const {
  return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= width - 1.0 &&
         px.y() <= height - 1.0;
}

Vec2 project(const CameraIntrinsics& k, const Vec3& point) {
  if (!(point.z() > 0.0)) {
    fail(ErrorCode::kNonPositiveDepth,
         "cannot project a point with z = " + std::to_string(point.z()));
  }
  return {k.fx * point.x() / point.z() + k.cx,
          k.fy * point.y() / point.z() + k.cy};
}

Vec3 backproject(const CameraIntrinsics& k, const Vec2& pixel, double depth,
                 const DepthRange& range) {
  if (!(depth >= range.min && depth <= range.max)) {
    fail(ErrorCode::kDepthOutOfRange,
         "depth " + std::to_string(depth) + " mm outside [" +
             std::to_string(range.min) + ", " + std::to_string(range.max) +
             "]");
  }
  return {depth * (pixel.x() - k.cx) / k.fx, depth * (pixel.y() - k.cy) / k.fy,
          depth};
}

Mat2 Svd2::reconstruct() const {
  return u * singular_values.asDiagonal() * v.transpose();
}

Svd2 svd2x2(const Mat2& a) {
  // Write A = R(phi) diag(sx, sy) R(psi). With
  //   E = (a+d)/2, F = (a-d)/2, G = (c+b)/2, H = (c-b)/2
  // the rotation-like part is [E -H; H E] and the reflection-like part is
  // [F G; G -F]; their magnitudes Q and R give sx = Q + R, sy = Q - R.
  const double e = 0.5 * (a(0, 0) + a(1, 1));
  const double f = 0.5 * (a(0, 0) - a(1, 1));
  const double g = 0.5 * (a(1, 0) + a(0, 1));
  const double h = 0.5 * (a(1, 0) - a(0, 1));
  const double q = std::hypot(e, h);
  const double r = std::hypot(f, g);
  const double a1 = std::atan2(g, f);
  const double a2 = std::atan2(h, e);
  const double phi = 0.5 * (a2 + a1);
  const double psi = 0.5 * (a2 - a1);

  Svd2 out;
  out.u = rot2(phi);
  // A = U diag V^T with V^T = R(psi), i.e. V = R(-psi).
  out.v = rot2(-psi);
  double sx = q + r;
  double sy = q - r;
  if (sy < 0.0) {
    // Negative determinant: fold the sign into U so D stays nonnegative.
    sy = -sy;
    out.u.col(1) = -out.u.col(1);
  }
  out.singular_values = Vec2(sx, sy);
  return out;
}

}  // namespace lapfov

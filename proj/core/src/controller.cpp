#include "lapfov/controller.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "lapfov/error.hpp"

namespace lapfov {

namespace {
constexpr double kSingularCutoff = 1e-8;
}  // namespace

RcmState make_rcm_state(const Pose& camera, const Pose& end_effector, const Vec3& trocar) {
  const Vec3 axis = camera.rotation().col(2);
  const double along = axis.dot(trocar - camera.translation());
  RcmState rcm;
  rcm.trocar = trocar;
  rcm.rcm_frame = Pose(camera.rotation(), camera.translation() + along * axis);
  rcm.camera_offset = -along;
  rcm.end_effector_in_rcm = rcm.rcm_frame.inverse().transform(end_effector.translation());
  return rcm;
}

void ControlGains::validate() const {
  if (!((ks.array() > 0.0).all() && (kr.array() > 0.0).all() && k_theta > 0.0 && k_d > 0.0)) {
    fail(ErrorCode::kInvalidConfig, "all control gains must be positive");
  }
}

Vec6 ControlCommand::twist() const {
  Vec6 out;
  out << linear, angular;
  return out;
}

Mat23 image_jacobian(const Vec2& p_t, double d_tool, const CameraIntrinsics& k) {
  if (!(d_tool > 0.0)) {
    fail(ErrorCode::kNonPositiveDepth, "image Jacobian needs a positive depth");
  }
  const double x = (p_t.x() - k.cx) / k.fx;
  const double y = (p_t.y() - k.cy) / k.fy;
  const double inv_z = 1.0 / d_tool;
  Mat23 j;
  j << -k.fx * inv_z, 0.0, k.fx * x * inv_z,
       0.0, -k.fy * inv_z, k.fy * y * inv_z;
  return j;
}

TaskJacobians task_jacobians(const Vec3& lever, const Mat23& j_img) {
  TaskJacobians jac;
  jac.j_d.col(0) = Vec3::UnitZ();
  jac.j_d.rightCols<3>() = skew(lever);
  jac.j_e.setZero();
  jac.j_e.rightCols<3>() = Mat3::Identity();
  jac.j_de << jac.j_d, jac.j_e;
  jac.j_fov = j_img * jac.j_d;
  return jac;
}

Vec3 tool_lever(const RcmState& rcm, const Vec2& p_t, double d_tool,
                const CameraIntrinsics& k) {
  const Vec3 tip_camera(d_tool * (p_t.x() - k.cx) / k.fx, d_tool * (p_t.y() - k.cy) / k.fy,
                        d_tool);
  return -(tip_camera + Vec3(0.0, 0.0, rcm.camera_offset));
}

Vec2 rcm_error(const Vec3& trocar, const Pose& camera) {
  const Vec3 trocar_in_shaft = camera.inverse().transform(trocar);
  return -trocar_in_shaft.head<2>();
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double cutoff) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd inv = svd.singularValues();
  for (Eigen::Index i = 0; i < inv.size(); ++i) inv(i) = inv(i) > cutoff ? 1.0 / inv(i) : 0.0;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

ControlCommand null_space_law(const TaskErrors& errors, const TaskJacobians& jac,
                              const ControlGains& gains) {
  ControlCommand cmd;
  cmd.frame = ControlCommand::Frame::kRcm;

  Eigen::JacobiSVD<Mat24> svd(jac.j_fov);
  const double sigma_min = svd.singularValues()(1);
  if (!std::isfinite(sigma_min) || sigma_min < kSingularCutoff) {
    cmd.ill_conditioned = true;
    return cmd;
  }

  const Eigen::Matrix<double, 4, 2> j_fov_pinv = pseudo_inverse(jac.j_fov, kSingularCutoff);
  const Eigen::Matrix<double, 4, 6> j_de_pinv = pseudo_inverse(jac.j_de, kSingularCutoff);
  const Mat4x4 null_projector = Mat4x4::Identity() - j_fov_pinv * jac.j_fov;

  const double camera_v = -gains.k_d * errors.e_d;
  const double camera_w = -gains.k_theta * errors.theta_star;
  Vec6 secondary = Vec6::Zero();
  secondary(2) = camera_v;
  secondary(5) = camera_w;

  const Vec4 q = -(gains.ks.asDiagonal() * (j_fov_pinv * errors.e_p)) -
                 null_projector * (j_de_pinv * secondary);

  cmd.linear = Vec3(-gains.kr.x() * errors.e_r.x(), -gains.kr.y() * errors.e_r.y(), q(0));
  cmd.angular = q.tail<3>();
  return cmd;
}

ControlCommand to_end_effector(const ControlCommand& cmd, const RcmState& rcm) {
  if (cmd.frame != ControlCommand::Frame::kRcm) {
    fail(ErrorCode::kInvalidArgument, "expected an RCM-frame command");
  }
  const Mat3& r = rcm.rcm_frame.rotation();
  ControlCommand out = cmd;
  out.frame = ControlCommand::Frame::kBase;
  out.linear = r * (cmd.linear - skew(rcm.end_effector_in_rcm) * cmd.angular);
  out.angular = r * cmd.angular;
  return out;
}

ControlCommand to_rcm(const ControlCommand& cmd, const RcmState& rcm) {
  if (cmd.frame != ControlCommand::Frame::kBase) {
    fail(ErrorCode::kInvalidArgument, "expected a base-frame command");
  }
  const Mat3 rt = rcm.rcm_frame.rotation().transpose();
  ControlCommand out = cmd;
  out.frame = ControlCommand::Frame::kRcm;
  out.angular = rt * cmd.angular;
  out.linear = rt * cmd.linear + skew(rcm.end_effector_in_rcm) * out.angular;
  return out;
}

double lyapunov(const TaskErrors& errors) {
  return 0.5 * errors.e_r.squaredNorm() + 0.5 * errors.e_p.squaredNorm() +
         0.5 * errors.e_d * errors.e_d;
}

void MotionLimits::validate() const {
  if (!(max_linear > 0.0 && max_angular > 0.0)) {
    fail(ErrorCode::kInvalidConfig, "motion limits must be positive");
  }
}

ControlCommand apply_limits(const ControlCommand& cmd, const MotionLimits& limits) {
  const double lin = cmd.linear.norm();
  const double ang = cmd.angular.norm();
  const double scale = std::min({1.0, lin > 0.0 ? limits.max_linear / lin : 1.0,
                                 ang > 0.0 ? limits.max_angular / ang : 1.0});
  ControlCommand out = cmd;
  out.linear *= scale;
  out.angular *= scale;
  return out;
}

Pose integrate_twist(const Pose& end_effector, const ControlCommand& base_cmd, double dt) {
  if (base_cmd.frame != ControlCommand::Frame::kBase) {
    fail(ErrorCode::kInvalidArgument, "integration expects a base-frame twist");
  }
  const Mat3 rotation = rodrigues(base_cmd.angular * dt) * end_effector.rotation();
  const Vec3 translation = end_effector.translation() + base_cmd.linear * dt;
  return compose(Pose(rotation, translation), Pose::Identity());
}

}  // namespace lapfov

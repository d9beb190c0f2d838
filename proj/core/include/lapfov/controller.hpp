#pragma once

#include <Eigen/Core>

#include "lapfov/geometry.hpp"

namespace lapfov {

using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat24 = Eigen::Matrix<double, 2, 4>;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using Mat64 = Eigen::Matrix<double, 6, 4>;
using Mat4x4 = Eigen::Matrix4d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

/// Laparoscope pose relative to its trocar. The RCM frame has the camera's
/// axes and sits on the shaft at the point closest to the trocar, so the
/// camera is at (0, 0, camera_offset) in RCM coordinates.
struct RcmState {
  Vec3 trocar = Vec3::Zero();
  Pose rcm_frame;
  double camera_offset = 0.0;
  /// End-effector position in RCM coordinates.
  Vec3 end_effector_in_rcm = Vec3::Zero();
};

/// `end_effector` maps end-effector to base coordinates.
RcmState make_rcm_state(const Pose& camera, const Pose& end_effector, const Vec3& trocar);

struct ControlGains {
  Vec4 ks = Vec4(3e-3, 1.0, 1.0, 1.0);
  Vec2 kr = Vec2(0.5, 0.5);
  double k_theta = 1.0;
  double k_d = 0.1;

  void validate() const;
};

struct TaskErrors {
  Vec2 e_p = Vec2::Zero();
  double e_d = 0.0;
  Vec2 e_r = Vec2::Zero();
  double theta_star = 0.0;
};

struct ControlCommand {
  enum class Frame { kRcm, kBase };

  Vec3 linear = Vec3::Zero();
  Vec3 angular = Vec3::Zero();
  Frame frame = Frame::kRcm;
  bool ill_conditioned = false;

  Vec6 twist() const;
};

/// Linear-velocity block of the point interaction matrix, pixel units.
Mat23 image_jacobian(const Vec2& p_t, double d_tool, const CameraIntrinsics& k);

struct TaskJacobians {
  Mat34 j_d;
  Mat34 j_e;
  Mat64 j_de;
  Mat24 j_fov;
};

/// Jacobians of the actuation q = [v_insert, wx, wy, wz] (RCM frame).
/// `lever` is the vector from the tracked point to the RCM origin in RCM
/// coordinates; with it J_d maps q to the equivalent camera linear velocity
/// and J_fov is the exact pixel-velocity Jacobian.
TaskJacobians task_jacobians(const Vec3& lever, const Mat23& j_img);

/// Lever for a tool tip observed at `p_t` with depth `d_tool`.
Vec3 tool_lever(const RcmState& rcm, const Vec2& p_t, double d_tool,
                const CameraIntrinsics& k);

/// Offset of the shaft from the trocar, (shaft point - trocar) in shaft-frame
/// x and y.
Vec2 rcm_error(const Vec3& trocar, const Pose& camera);

/// Moore-Penrose pseudo-inverse by SVD with an absolute singular-value cutoff.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double cutoff = 1e-8);

/// Primary 2D tracking through J_fov^+, depth and roll corrections projected
/// onto the null space of J_fov, RCM correction on the in-plane RCM velocity.
ControlCommand null_space_law(const TaskErrors& errors, const TaskJacobians& jac,
                              const ControlGains& gains);

/// RCM-frame twist to base-frame end-effector twist.
ControlCommand to_end_effector(const ControlCommand& cmd, const RcmState& rcm);

/// Inverse of `to_end_effector`.
ControlCommand to_rcm(const ControlCommand& cmd, const RcmState& rcm);

double lyapunov(const TaskErrors& errors);

struct MotionLimits {
  double max_linear = 20.0;   // mm/s
  double max_angular = 0.6;   // rad/s

  void validate() const;
};

/// Scales the whole twist uniformly so neither norm exceeds its limit.
ControlCommand apply_limits(const ControlCommand& cmd, const MotionLimits& limits);

/// First-order step of a base-frame end-effector twist.
Pose integrate_twist(const Pose& end_effector, const ControlCommand& base_cmd, double dt);

}  // namespace lapfov

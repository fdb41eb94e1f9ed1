#pragma once

#include <string>
#include <vector>

#include "bimanip/geometry.hpp"

namespace bimanip {

/// One revolute joint of a serial chain.
///
/// The joint frame is reached by applying `origin_offset` in the parent frame
/// and then rotating by the joint angle about `axis` (unit vector, joint frame).
struct Joint {
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  Pose origin_offset = Pose::identity();
  double pos_lo = -M_PI;
  double pos_hi = M_PI;
  double vel_limit = 1.0;  // rad/s
};

/// Sphere used for collision constraints, rigidly attached to a link.
/// link_index -1 attaches to the arm base frame.
struct CollisionSphere {
  int link_index = 0;
  Eigen::Vector3d local_offset = Eigen::Vector3d::Zero();
  double radius = 0.05;
};

/// Serial kinematic chain with joint limits and sphere geometry.
struct ArmModel {
  Pose base_pose = Pose::identity();
  std::vector<Joint> joints;
  std::vector<CollisionSphere> collision_spheres;
  Pose ee_offset = Pose::identity();  // tool frame in last-link frame

  int dof() const { return static_cast<int>(joints.size()); }

  /// Throws std::invalid_argument on any violated invariant.
  void validate() const;
};

struct BiArmModel {
  ArmModel left;
  ArmModel right;
  Aabb workspace;

  int dof() const { return left.dof() + right.dof(); }

  void validate() const;
};

enum class ArmSide { Left = 0, Right = 1 };

inline const char* arm_name(ArmSide side) {
  return side == ArmSide::Left ? "left-arm" : "right-arm";
}

inline const ArmModel& arm_of(const BiArmModel& model, ArmSide side) {
  return side == ArmSide::Left ? model.left : model.right;
}

/// Joint-vector slice [offset, offset+dof) of `side` within the combined vector.
inline int arm_joint_offset(const BiArmModel& model, ArmSide side) {
  return side == ArmSide::Left ? 0 : model.left.dof();
}

/// Frames after each joint rotation, workspace frame. frames[i] carries link i.
std::vector<Pose> link_frames(const ArmModel& arm, const Eigen::Ref<const Eigen::VectorXd>& q);

/// End-effector pose for joint vector q (throws on dimension mismatch).
Pose forward_kinematics(const ArmModel& arm, const Eigen::Ref<const Eigen::VectorXd>& q);

struct SphereState {
  Eigen::Vector3d center;
  double radius;
};

/// Workspace-frame centers of all collision spheres.
std::vector<SphereState> sphere_centers(const ArmModel& arm,
                                        const Eigen::Ref<const Eigen::VectorXd>& q);

/// Geometric Jacobian of the end-effector: rows 0-2 linear, 3-5 angular.
Eigen::MatrixXd ee_jacobian(const ArmModel& arm, const Eigen::Ref<const Eigen::VectorXd>& q);

/// 3 x dof Jacobian of one sphere center.
Eigen::MatrixXd sphere_point_jacobian(const ArmModel& arm,
                                      const Eigen::Ref<const Eigen::VectorXd>& q,
                                      int sphere_index);

/// 3 x dof Jacobian of an arbitrary point rigidly attached to link `link_index`
/// (workspace-frame point `point`).
Eigen::MatrixXd link_point_jacobian(const ArmModel& arm,
                                    const Eigen::Ref<const Eigen::VectorXd>& q, int link_index,
                                    const Eigen::Vector3d& point);

/// Clamps q to the arm's position limits.
Eigen::VectorXd clamp_to_limits(const ArmModel& arm, const Eigen::VectorXd& q);

/// Documented 2-DoF planar arm (two revolute Z joints, 0.5 m links) used
/// throughout the unit tests.
ArmModel make_planar_test_arm();

/// Default desk-scale bi-arm cell: two 6-DoF arms, bases 1.2 m apart,
/// 4 collision spheres per arm, tabletop workspace.
BiArmModel make_desk_biarm();

/// Neutral "ready" configuration for the desk model (combined joint vector).
Eigen::VectorXd desk_home_configuration(const BiArmModel& model);

/// Damped-least-squares IK step toward a pose target; test and utility code.
/// Returns true if converged to tolerances within max_iters.
bool damped_ik(const ArmModel& arm, const Pose& target, Eigen::VectorXd& q, int max_iters = 200,
               double pos_tol = 1e-4, double rot_tol = 1e-3, double damping = 1e-3);

}  // namespace bimanip

#include "bimanip/arm.hpp"

#include <sstream>
#include <stdexcept>

namespace bimanip {

void ArmModel::validate() const {
  for (size_t i = 0; i < joints.size(); ++i) {
    const Joint& j = joints[i];
    if (!(j.pos_lo < j.pos_hi)) {
      std::ostringstream os;
      os << "joint " << i << ": pos_lo must be < pos_hi";
      throw std::invalid_argument(os.str());
    }
    if (!(j.vel_limit > 0.0)) throw std::invalid_argument("vel_limit must be positive");
    if (std::abs(j.axis.norm() - 1.0) > 1e-6) throw std::invalid_argument("joint axis must be unit");
  }
  for (const CollisionSphere& s : collision_spheres) {
    if (!(s.radius > 0.0)) throw std::invalid_argument("sphere radius must be positive");
    if (s.link_index < -1 || s.link_index >= dof())
      throw std::invalid_argument("sphere link_index out of range");
  }
}

void BiArmModel::validate() const {
  left.validate();
  right.validate();
  if (!workspace.valid()) throw std::invalid_argument("workspace box is inverted");
  if (!workspace.contains(left.base_pose.position) || !workspace.contains(right.base_pose.position))
    throw std::invalid_argument("arm base poses must lie inside the workspace box");
}

namespace {

void check_dims(const ArmModel& arm, const Eigen::Ref<const Eigen::VectorXd>& q) {
  if (q.size() != arm.dof()) {
    std::ostringstream os;
    os << "joint vector size " << q.size() << " does not match arm dof " << arm.dof();
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

std::vector<Pose> link_frames(const ArmModel& arm, const Eigen::Ref<const Eigen::VectorXd>& q) {
  check_dims(arm, q);
  std::vector<Pose> frames(arm.joints.size());
  Pose t = arm.base_pose;
  for (size_t i = 0; i < arm.joints.size(); ++i) {
    const Joint& j = arm.joints[i];
    t = t * j.origin_offset * Pose::axis_angle(j.axis, q[static_cast<int>(i)]);
    frames[i] = t;
  }
  return frames;
}

Pose forward_kinematics(const ArmModel& arm, const Eigen::Ref<const Eigen::VectorXd>& q) {
  check_dims(arm, q);
  Pose t = arm.base_pose;
  for (size_t i = 0; i < arm.joints.size(); ++i) {
    const Joint& j = arm.joints[i];
    t = t * j.origin_offset * Pose::axis_angle(j.axis, q[static_cast<int>(i)]);
  }
  return t * arm.ee_offset;
}

std::vector<SphereState> sphere_centers(const ArmModel& arm,
                                        const Eigen::Ref<const Eigen::VectorXd>& q) {
  const std::vector<Pose> frames = link_frames(arm, q);
  std::vector<SphereState> out;
  out.reserve(arm.collision_spheres.size());
  for (const CollisionSphere& s : arm.collision_spheres) {
    const Pose& frame = s.link_index < 0 ? arm.base_pose : frames[s.link_index];
    out.push_back({frame.apply(s.local_offset), s.radius});
  }
  return out;
}

namespace {

/// Joint origins and world-frame axes, needed by all Jacobians.
struct JointGeometry {
  std::vector<Eigen::Vector3d> origins;
  std::vector<Eigen::Vector3d> axes;
};

JointGeometry joint_geometry(const ArmModel& arm, const Eigen::Ref<const Eigen::VectorXd>& q) {
  JointGeometry geo;
  geo.origins.reserve(arm.joints.size());
  geo.axes.reserve(arm.joints.size());
  Pose t = arm.base_pose;
  for (size_t i = 0; i < arm.joints.size(); ++i) {
    const Joint& j = arm.joints[i];
    const Pose joint_frame = t * j.origin_offset;
    geo.origins.push_back(joint_frame.position);
    geo.axes.push_back(joint_frame.orientation * j.axis);
    t = joint_frame * Pose::axis_angle(j.axis, q[static_cast<int>(i)]);
  }
  return geo;
}

}  // namespace

Eigen::MatrixXd ee_jacobian(const ArmModel& arm, const Eigen::Ref<const Eigen::VectorXd>& q) {
  check_dims(arm, q);
  const JointGeometry geo = joint_geometry(arm, q);
  const Eigen::Vector3d p_ee = forward_kinematics(arm, q).position;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(6, arm.dof());
  for (int i = 0; i < arm.dof(); ++i) {
    jac.block<3, 1>(0, i) = geo.axes[i].cross(p_ee - geo.origins[i]);
    jac.block<3, 1>(3, i) = geo.axes[i];
  }
  return jac;
}

Eigen::MatrixXd link_point_jacobian(const ArmModel& arm,
                                    const Eigen::Ref<const Eigen::VectorXd>& q, int link_index,
                                    const Eigen::Vector3d& point) {
  check_dims(arm, q);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3, arm.dof());
  if (link_index < 0) return jac;  // base-fixed point never moves
  const JointGeometry geo = joint_geometry(arm, q);
  for (int i = 0; i <= link_index; ++i) {
    jac.block<3, 1>(0, i) = geo.axes[i].cross(point - geo.origins[i]);
  }
  return jac;
}

Eigen::MatrixXd sphere_point_jacobian(const ArmModel& arm,
                                      const Eigen::Ref<const Eigen::VectorXd>& q,
                                      int sphere_index) {
  if (sphere_index < 0 || sphere_index >= static_cast<int>(arm.collision_spheres.size()))
    throw std::invalid_argument("sphere_index out of range");
  const CollisionSphere& s = arm.collision_spheres[sphere_index];
  const std::vector<Pose> frames = link_frames(arm, q);
  const Pose& frame = s.link_index < 0 ? arm.base_pose : frames[s.link_index];
  return link_point_jacobian(arm, q, s.link_index, frame.apply(s.local_offset));
}

Eigen::VectorXd clamp_to_limits(const ArmModel& arm, const Eigen::VectorXd& q) {
  Eigen::VectorXd out = q;
  for (int i = 0; i < arm.dof(); ++i)
    out[i] = std::clamp(out[i], arm.joints[i].pos_lo, arm.joints[i].pos_hi);
  return out;
}

ArmModel make_planar_test_arm() {
  ArmModel arm;
  Joint j0;
  j0.axis = Eigen::Vector3d::UnitZ();
  j0.origin_offset = Pose::identity();
  j0.pos_lo = -M_PI;
  j0.pos_hi = M_PI;
  j0.vel_limit = 2.0;
  Joint j1 = j0;
  j1.origin_offset = Pose::translation(0.5, 0.0, 0.0);
  arm.joints = {j0, j1};
  arm.ee_offset = Pose::translation(0.5, 0.0, 0.0);
  return arm;
}

namespace {

Joint make_joint(const Eigen::Vector3d& axis, const Pose& offset, double lo, double hi,
                 double vel) {
  Joint j;
  j.axis = axis;
  j.origin_offset = offset;
  j.pos_lo = lo;
  j.pos_hi = hi;
  j.vel_limit = vel;
  return j;
}

/// 6-DoF arm: yaw shoulder, two pitch joints, roll-pitch-roll wrist.
/// At the zero configuration the arm points along its base +x axis.
ArmModel make_desk_arm(const Pose& base) {
  ArmModel arm;
  arm.base_pose = base;
  const double vel = 1.2;
  arm.joints = {
      make_joint(Eigen::Vector3d::UnitZ(), Pose::translation(0.0, 0.0, 0.25), -2.9, 2.9, vel),
      make_joint(Eigen::Vector3d::UnitY(), Pose::identity(), -2.2, 2.2, vel),
      make_joint(Eigen::Vector3d::UnitY(), Pose::translation(0.30, 0.0, 0.0), -2.6, 2.6, vel),
      make_joint(Eigen::Vector3d::UnitX(), Pose::translation(0.30, 0.0, 0.0), -2.9, 2.9, vel),
      make_joint(Eigen::Vector3d::UnitY(), Pose::translation(0.08, 0.0, 0.0), -2.0, 2.0, vel),
      make_joint(Eigen::Vector3d::UnitX(), Pose::identity(), -2.9, 2.9, vel),
  };
  // tool frame: z points along the final link's +x (approach axis)
  arm.ee_offset = Pose{Eigen::Vector3d(0.10, 0.0, 0.0),
                       Eigen::Quaterniond(Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitY()))};
  arm.collision_spheres = {
      {1, Eigen::Vector3d(0.15, 0.0, 0.0), 0.07},  // upper arm
      {2, Eigen::Vector3d(0.15, 0.0, 0.0), 0.06},  // forearm
      {3, Eigen::Vector3d(0.04, 0.0, 0.0), 0.05},  // wrist
      {5, Eigen::Vector3d(0.10, 0.0, 0.0), 0.04},  // tool
  };
  return arm;
}

}  // namespace

BiArmModel make_desk_biarm() {
  BiArmModel model;
  // bases 1.2 m apart on the table edge, each facing the workspace center
  model.left = make_desk_arm(Pose{Eigen::Vector3d(-0.6, 0.0, 0.0), Eigen::Quaterniond::Identity()});
  model.right = make_desk_arm(
      Pose{Eigen::Vector3d(0.6, 0.0, 0.0),
           Eigen::Quaterniond(Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitZ()))});
  model.workspace = Aabb(Eigen::Vector3d(-0.95, -0.40, 0.0), Eigen::Vector3d(0.95, 0.55, 0.90));
  model.validate();
  return model;
}

Eigen::VectorXd desk_home_configuration(const BiArmModel& model) {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(model.dof());
  // shoulders raised, elbows ahead, tools above the table pointing down-forward
  const double home[6] = {0.35, -0.6, 1.3, 0.0, 0.6, 0.0};
  for (int i = 0; i < 6; ++i) {
    q[i] = home[i];
    q[model.left.dof() + i] = home[i];
  }
  q[model.left.dof()] = -0.35;  // right arm yaw mirrored toward the table
  return q;
}

bool damped_ik(const ArmModel& arm, const Pose& target, Eigen::VectorXd& q, int max_iters,
               double pos_tol, double rot_tol, double damping) {
  for (int it = 0; it < max_iters; ++it) {
    const Pose ee = forward_kinematics(arm, q);
    const Eigen::Vector3d ep = target.position - ee.position;
    const Eigen::Vector3d er = orientation_error(target.orientation, ee.orientation);
    if (ep.norm() < pos_tol && er.norm() < rot_tol) return true;
    Eigen::Matrix<double, 6, 1> err;
    err << ep, er;
    const Eigen::MatrixXd jac = ee_jacobian(arm, q);
    const Eigen::MatrixXd jjt =
        jac * jac.transpose() + damping * Eigen::MatrixXd::Identity(6, 6);
    const Eigen::VectorXd dq = jac.transpose() * jjt.ldlt().solve(err);
    q += dq.cwiseMax(-0.3).cwiseMin(0.3);
    q = clamp_to_limits(arm, q);
  }
  const Pose ee = forward_kinematics(arm, q);
  return (target.position - ee.position).norm() < pos_tol &&
         orientation_error(target.orientation, ee.orientation).norm() < rot_tol;
}

}  // namespace bimanip

#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace bimanip {

/// Rigid-body transform: position plus unit quaternion.
struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  static Pose identity() { return Pose{}; }

  static Pose translation(double x, double y, double z) {
    return Pose{Eigen::Vector3d(x, y, z), Eigen::Quaterniond::Identity()};
  }

  static Pose translation(const Eigen::Vector3d& p) {
    return Pose{p, Eigen::Quaterniond::Identity()};
  }

  static Pose rotation(const Eigen::Quaterniond& q) {
    return Pose{Eigen::Vector3d::Zero(), q.normalized()};
  }

  static Pose axis_angle(const Eigen::Vector3d& axis, double angle) {
    return rotation(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized())));
  }

  /// Applies this transform to a point.
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return position + orientation * p;
  }

  Eigen::Matrix3d rotation_matrix() const { return orientation.toRotationMatrix(); }
};

/// Composition a∘b: the transform that first applies b, then a.
inline Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.position = a.position + a.orientation * b.position;
  out.orientation = (a.orientation * b.orientation).normalized();
  return out;
}

inline Pose operator*(const Pose& a, const Pose& b) { return compose(a, b); }

inline Pose inverse(const Pose& p) {
  Pose out;
  out.orientation = p.orientation.conjugate();
  out.position = -(out.orientation * p.position);
  return out;
}

/// Geodesic angle between two orientations: 2*acos(|<qa, qb>|), in [0, pi].
inline double orientation_angle(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  const double d = std::abs(a.coeffs().dot(b.coeffs()));
  return 2.0 * std::acos(std::min(1.0, d));
}

/// Axis-angle vector of the rotation taking `from` to `to` (world frame).
/// Its norm equals orientation_angle(from, to).
inline Eigen::Vector3d orientation_error(const Eigen::Quaterniond& to,
                                         const Eigen::Quaterniond& from) {
  Eigen::Quaterniond rel = to * from.conjugate();
  if (rel.w() < 0.0) rel.coeffs() *= -1.0;
  const Eigen::AngleAxisd aa(rel);
  return aa.angle() * aa.axis();
}

/// Axis-aligned box.
struct Aabb {
  Eigen::Vector3d min_corner = Eigen::Vector3d::Zero();
  Eigen::Vector3d max_corner = Eigen::Vector3d::Zero();

  Aabb() = default;
  Aabb(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) : min_corner(lo), max_corner(hi) {}

  bool valid() const { return (min_corner.array() <= max_corner.array()).all(); }

  Eigen::Vector3d center() const { return 0.5 * (min_corner + max_corner); }
  Eigen::Vector3d extents() const { return max_corner - min_corner; }

  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= min_corner.array()).all() && (p.array() <= max_corner.array()).all();
  }

  bool contains(const Aabb& other) const {
    return contains(other.min_corner) && contains(other.max_corner);
  }

  Aabb dilated(double margin) const {
    return Aabb(min_corner.array() - margin, max_corner.array() + margin);
  }

  bool intersects(const Aabb& other) const {
    return (min_corner.array() <= other.max_corner.array()).all() &&
           (max_corner.array() >= other.min_corner.array()).all();
  }

  /// Union of the two boxes.
  Aabb merged(const Aabb& other) const {
    return Aabb(min_corner.cwiseMin(other.min_corner), max_corner.cwiseMax(other.max_corner));
  }
};

/// Signed distance from a point to a box boundary: negative inside.
inline double signed_distance_point_aabb(const Eigen::Vector3d& p, const Aabb& box) {
  const Eigen::Vector3d clamped = p.cwiseMax(box.min_corner).cwiseMin(box.max_corner);
  const double outside = (p - clamped).norm();
  if (outside > 0.0) return outside;
  // inside: distance to nearest face (fixed x,y,z scan keeps ties deterministic)
  double nearest = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    nearest = std::min(nearest, p[i] - box.min_corner[i]);
    nearest = std::min(nearest, box.max_corner[i] - p[i]);
  }
  return -nearest;
}

/// Distance from a sphere surface to a box: positive separated, negative penetrating.
inline double signed_distance_sphere_aabb(const Eigen::Vector3d& center, double radius,
                                          const Aabb& box) {
  return signed_distance_point_aabb(center, box) - radius;
}

/// Gradient of signed_distance_sphere_aabb w.r.t. the sphere center.
/// At corners / inside, the subgradient is picked deterministically (x,y,z order).
inline Eigen::Vector3d sphere_aabb_distance_gradient(const Eigen::Vector3d& center,
                                                     const Aabb& box) {
  const Eigen::Vector3d clamped = center.cwiseMax(box.min_corner).cwiseMin(box.max_corner);
  const Eigen::Vector3d d = center - clamped;
  const double n = d.norm();
  if (n > 1e-12) return d / n;
  // on boundary or inside: outward normal of the nearest face, x,y,z scan order
  int best_axis = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  double best_sign = 1.0;
  for (int i = 0; i < 3; ++i) {
    const double to_min = center[i] - box.min_corner[i];
    const double to_max = box.max_corner[i] - center[i];
    if (to_min < best_dist) {
      best_dist = to_min;
      best_axis = i;
      best_sign = -1.0;
    }
    if (to_max < best_dist) {
      best_dist = to_max;
      best_axis = i;
      best_sign = 1.0;
    }
  }
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  g[best_axis] = best_sign;
  return g;
}

/// Surface-to-surface distance between two spheres: ||c1-c2|| - r1 - r2.
inline double distance_sphere_sphere(const Eigen::Vector3d& c1, double r1,
                                     const Eigen::Vector3d& c2, double r2) {
  return (c1 - c2).norm() - r1 - r2;
}

}  // namespace bimanip

#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace voxrf {

// Rigid camera-to-world transform: x_world = q * x_cam + t.
struct Pose {
  Eigen::Quaterniond q{1.0, 0.0, 0.0, 0.0};
  Eigen::Vector3d t{0.0, 0.0, 0.0};

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return q * x + t; }
  Eigen::Vector3d rotate(const Eigen::Vector3d& v) const { return q * v; }

  Pose inverse() const {
    const Eigen::Quaterniond qi = q.conjugate();
    return {qi, qi * (-t)};
  }

  void renormalize() { q.normalize(); }
};

inline Pose operator*(const Pose& a, const Pose& b) {
  return {(a.q * b.q).normalized(), a.q * b.t + a.t};
}

// Quaternion for the rotation exp([w]x). Uses the small-angle series below
// 1e-8 rad to stay smooth through zero.
inline Eigen::Quaterniond exp_so3(const Eigen::Vector3d& w) {
  const double angle = w.norm();
  if (angle < 1e-8) {
    Eigen::Quaterniond q(1.0, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z());
    q.normalize();
    return q;
  }
  const Eigen::Vector3d axis = w / angle;
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis));
}

// Axis-angle with |w| < pi for a unit quaternion (sign chosen so w >= 0).
inline Eigen::Vector3d log_so3(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Eigen::AngleAxisd aa(q);
  return aa.angle() * aa.axis();
}

inline double rotation_angle_rad(const Eigen::Quaterniond& q) {
  const double w = std::min(1.0, std::abs(q.normalized().w()));
  return 2.0 * std::acos(w);
}

// Camera-to-world pose looking from eye toward target. Camera convention is
// x right, y down, z forward, so -y_cam aligns with `up`.
inline Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                    const Eigen::Vector3d& up = Eigen::Vector3d(0, 0, 1)) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = forward.cross(up);
  if (right.squaredNorm() < 1e-12) {
    // Degenerate forward || up; pick any perpendicular.
    right = forward.cross(Eigen::Vector3d(1, 0, 0));
    if (right.squaredNorm() < 1e-12) right = forward.cross(Eigen::Vector3d(0, 1, 0));
  }
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d rot;
  rot.col(0) = right;
  rot.col(1) = down;
  rot.col(2) = forward;
  return {Eigen::Quaterniond(rot).normalized(), eye};
}

}  // namespace voxrf

// Planar pose with yaw stored as the (qz, qw) half of a z-axis quaternion.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tpose {

struct Pose3DOF {
  double x = 0.0;
  double y = 0.0;
  double qz = 0.0;
  double qw = 1.0;

  Eigen::Vector2d position() const { return {x, y}; }
  Eigen::Vector2d rotation() const { return {qz, qw}; }

  bool operator==(const Pose3DOF&) const = default;
};

/// Quaternion pairs with a norm below this are treated as carrying no rotation.
inline constexpr double kDegenerateQuaternionNorm = 1e-12;

/// Unit length and qw >= 0. Returns false (and leaves `q` untouched) for a
/// degenerate pair.
inline bool canonicalize_quaternion(Eigen::Vector2d& q) {
  const double n = q.norm();
  if (!(n >= kDegenerateQuaternionNorm) || !std::isfinite(n)) {
    return false;
  }
  q /= n;
  if (q.y() < 0.0 || (q.y() == 0.0 && q.x() < 0.0)) {
    q = -q;
  }
  return true;
}

inline Pose3DOF canonical(Pose3DOF pose) {
  Eigen::Vector2d q = pose.rotation();
  if (!canonicalize_quaternion(q)) {
    q = {0.0, 1.0};
  }
  pose.qz = q.x();
  pose.qw = q.y();
  return pose;
}

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

/// Yaw of the quaternion (0, 0, qz, qw), in (-pi, pi].
inline double yaw_of(double qz, double qw) { return wrap_angle(2.0 * std::atan2(qz, qw)); }

inline double yaw_of(const Pose3DOF& p) { return yaw_of(p.qz, p.qw); }

/// Canonical (qz, qw) for a yaw angle.
inline Eigen::Vector2d quaternion_from_yaw(double yaw) {
  Eigen::Vector2d q(std::sin(0.5 * yaw), std::cos(0.5 * yaw));
  canonicalize_quaternion(q);
  return q;
}

inline Pose3DOF make_pose(double x, double y, double yaw) {
  const Eigen::Vector2d q = quaternion_from_yaw(yaw);
  return Pose3DOF{x, y, q.x(), q.y()};
}

/// Unsigned angular distance min(|a-b|, 2pi-|a-b|), in [0, pi].
inline double angle_distance(double a, double b) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double d = std::fmod(std::abs(a - b), two_pi);
  return std::min(d, two_pi - d);
}

}  // namespace tpose

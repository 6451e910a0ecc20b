#pragma once

// Minimal SO(3) toolkit: skew, exponential/logarithm maps, yaw/tilt split
// and quaternion conversion for file-format boundaries.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "xio/error.hpp"

namespace xio {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rotation vector (axis * angle, radians).
using RotVec = Eigen::Vector3d;

/// Element of SO(3) stored as an orthonormal 3x3 matrix.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  /// Wraps `m` without re-orthonormalizing; callers hand over valid rotations.
  explicit Rotation(const Mat3& m) : m_(m) {}

  static Rotation identity() { return Rotation(); }

  const Mat3& matrix() const { return m_; }

  Rotation inverse() const { return Rotation(m_.transpose()); }

  Rotation operator*(const Rotation& other) const { return Rotation(m_ * other.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// True when m^T m = I and det(m) = +1 within `tol`.
  bool is_valid(double tol = 1e-9) const {
    if (!m_.allFinite()) return false;
    const double ortho = (m_.transpose() * m_ - Mat3::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(m_.determinant() - 1.0) <= tol;
  }

 private:
  Mat3 m_;
};

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return s;
}

inline Vec3 vee(const Mat3& s) { return Vec3(s(2, 1), s(0, 2), s(1, 0)); }

inline constexpr double kSmallAngle = 1e-8;
inline constexpr double kNearPiMargin = 1e-6;

inline Rotation exp_so3(const RotVec& phi) {
  const double theta = phi.norm();
  const Mat3 k = skew(phi);
  if (theta < kSmallAngle) {
    return Rotation(Mat3::Identity() + k + 0.5 * k * k);
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Rotation(Mat3::Identity() + a * k + b * k * k);
}

/// Inverse of exp_so3 for rotation angles strictly below pi.
/// Throws NearPiRotation when the angle is within 1e-6 of pi.
inline RotVec log_so3(const Rotation& r) {
  const Mat3& m = r.matrix();
  const Vec3 w = 0.5 * vee(m - m.transpose());  // sin(theta) * axis
  const double cos_theta = std::clamp(0.5 * (m.trace() - 1.0), -1.0, 1.0);
  const double sin_theta = w.norm();
  const double theta = std::atan2(sin_theta, cos_theta);

  if (theta < kSmallAngle) {
    // second-order: theta / sin(theta) ~ 1 + theta^2 / 6
    return (1.0 + theta * theta / 6.0) * w;
  }
  if (std::numbers::pi - theta < kNearPiMargin) {
    throw Error(ErrorCode::NearPiRotation,
                "rotation angle " + std::to_string(theta) + " is within 1e-6 of pi");
  }
  if (cos_theta > -0.5) {
    return (theta / sin_theta) * w;
  }
  // Near pi the antisymmetric part vanishes; recover the axis from the
  // symmetric part (1 - cos) a a^T and take its sign from w.
  const Mat3 b = 0.5 * (m + m.transpose()) - cos_theta * Mat3::Identity();
  Eigen::Index col = 0;
  b.diagonal().maxCoeff(&col);
  Vec3 axis = b.col(col) / std::sqrt(b(col, col) * (1.0 - cos_theta));
  axis.normalize();
  if (axis.dot(w) < 0.0) axis = -axis;
  return theta * axis;
}

/// Right Jacobian of SO(3): exp(phi + d) ~ exp(phi) exp(J_r(phi) d).
inline Mat3 right_jacobian_so3(const RotVec& phi) {
  const double theta = phi.norm();
  const Mat3 k = skew(phi);
  if (theta < 1e-5) {
    return Mat3::Identity() - 0.5 * k + k * k / 6.0;
  }
  const double t2 = theta * theta;
  return Mat3::Identity() - (1.0 - std::cos(theta)) / t2 * k +
         (theta - std::sin(theta)) / (t2 * theta) * k * k;
}

inline Rotation rot_z(double yaw) { return exp_so3(Vec3(0.0, 0.0, yaw)); }

/// Heading of `r` about world z (ZYX convention).
inline double yaw_of(const Rotation& r) {
  return std::atan2(r.matrix()(1, 0), r.matrix()(0, 0));
}

/// r = yaw_part(r) * tilt_part(r), yaw_part a pure rotation about world z.
inline Rotation yaw_part(const Rotation& r) { return rot_z(yaw_of(r)); }
inline Rotation tilt_part(const Rotation& r) { return yaw_part(r).inverse() * r; }

/// Geodesic interpolation between a (s = 0) and b (s = 1).
inline Rotation slerp(const Rotation& a, const Rotation& b, double s) {
  return a * exp_so3(s * log_so3(a.inverse() * b));
}

/// Hamilton quaternion (w, x, y, z) to rotation; the input is normalized.
inline Rotation from_quaternion(double w, double x, double y, double z) {
  Eigen::Quaterniond q(w, x, y, z);
  q.normalize();
  return Rotation(q.toRotationMatrix());
}

inline Eigen::Quaterniond to_quaternion(const Rotation& r) {
  Eigen::Quaterniond q(r.matrix());
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

}  // namespace xio

#pragma once

#include <vector>

#include "xio/geometry.hpp"

namespace xio {

/// One 6-axis inertial measurement. `gyro` in rad/s, `accel` is specific
/// force in m/s^2, both in the IMU frame.
struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();

  bool finite() const { return std::isfinite(t) && gyro.allFinite() && accel.allFinite(); }
};

using ImuStream = std::vector<ImuSample>;

/// Fixed-length run of consecutive samples (the network input).
using ImuWindow = std::vector<ImuSample>;

inline constexpr double kGravity = 9.80665;

inline Vec3 default_gravity() { return Vec3(0.0, 0.0, -kGravity); }

}  // namespace xio

#pragma once

// Error-state EKF on SO(3) driven by raw IMU propagation and corrected by
// learned window displacements.
//
// Error convention is left-multiplicative, R = exp(theta) * R_hat. The error
// vector is laid out as
//   [clone_0 (theta, p) ... clone_{n-1} (theta, p) | theta, v, p, b_g, b_a]
// so the covariance has dimension 15 + 6n.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "xio/config.hpp"
#include "xio/geometry.hpp"
#include "xio/imu.hpp"

namespace xio {

using Covariance = Eigen::MatrixXd;

struct NoiseConfig {
  double sigma_g = 0.0;   // rad/s/sqrt(Hz)
  double sigma_a = 0.0;   // m/s^2/sqrt(Hz)
  double sigma_bg = 0.0;  // rad/s^2/sqrt(Hz)
  double sigma_ba = 0.0;  // m/s^3/sqrt(Hz)
  Vec3 gravity = default_gravity();

  bool valid() const {
    return sigma_g >= 0.0 && sigma_a >= 0.0 && sigma_bg >= 0.0 && sigma_ba >= 0.0 &&
           gravity.allFinite();
  }
};

struct Pose {
  Rotation R;
  Vec3 p = Vec3::Zero();
};

struct FilterState {
  Rotation R;
  Vec3 v = Vec3::Zero();
  Vec3 p = Vec3::Zero();
  Vec3 bg = Vec3::Zero();
  Vec3 ba = Vec3::Zero();
  std::vector<Pose> clones;  // oldest first
};

/// Predicted window displacement and its covariance, both in the frame of
/// the window-start clone.
struct DisplacementEstimate {
  Vec3 d = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
};

struct Belief {
  FilterState state;
  Covariance P;
};

/// Rotation used to express a window displacement: the clone's heading only
/// (inputs are gravity-aligned) or its full attitude.
enum class MeasurementFrame { YawOnly, Full };

namespace ekf {

inline constexpr int kCurrentDim = 15;
inline constexpr int kCloneDim = 6;

inline int dim(int n_clones) { return kCurrentDim + kCloneDim * n_clones; }
inline int clone_offset(int k) { return kCloneDim * k; }
inline int current_offset(int n_clones) { return kCloneDim * n_clones; }

// Offsets inside the 15-dim current block.
inline constexpr int kTheta = 0;
inline constexpr int kVel = 3;
inline constexpr int kPos = 6;
inline constexpr int kBg = 9;
inline constexpr int kBa = 12;

inline bool is_spd(const Eigen::MatrixXd& m) {
  if (!m.allFinite() || m.rows() != m.cols()) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, m.cwiseAbs().maxCoeff())) {
    return false;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (m + m.transpose()));
  return llt.info() == Eigen::Success;
}

inline void symmetrize(Covariance& P) { P = 0.5 * (P + P.transpose()).eval(); }

/// Builds the filter with `n_clones` copies of the initial pose. `P0` is the
/// 15x15 covariance of the current state; each clone receives an independent
/// copy of the (theta, p) block.
inline Belief init_state(const Rotation& R0, const Vec3& v0, const Vec3& p0, const Vec3& bg0,
                         const Vec3& ba0, const Eigen::MatrixXd& P0, int n_clones) {
  if (P0.rows() != kCurrentDim || P0.cols() != kCurrentDim) {
    throw Error(ErrorCode::ShapeMismatch, "initial covariance must be 15x15");
  }
  if (n_clones < 1) throw Error(ErrorCode::InvalidConfig, "clone count must be >= 1");
  if (!R0.is_valid()) throw Error(ErrorCode::NonFiniteInput, "initial rotation is not in SO(3)");
  if (!is_spd(P0)) {
    throw Error(ErrorCode::NonPDInitialCovariance, "initial covariance is not symmetric positive definite");
  }
  Belief b;
  b.state.R = R0;
  b.state.v = v0;
  b.state.p = p0;
  b.state.bg = bg0;
  b.state.ba = ba0;
  b.state.clones.assign(n_clones, Pose{R0, p0});

  const int n = dim(n_clones);
  const int c = current_offset(n_clones);
  b.P = Covariance::Zero(n, n);
  b.P.block(c, c, kCurrentDim, kCurrentDim) = P0;
  Eigen::Matrix<double, 6, 6> pose_block;
  pose_block << P0.block<3, 3>(kTheta, kTheta), P0.block<3, 3>(kTheta, kPos),
                P0.block<3, 3>(kPos, kTheta), P0.block<3, 3>(kPos, kPos);
  for (int k = 0; k < n_clones; ++k) {
    b.P.block<6, 6>(clone_offset(k), clone_offset(k)) = pose_block;
  }
  return b;
}

/// Linearized error dynamics of one propagation step: x' = F x + G n with
/// n = (n_g, n_a, n_bg, n_ba) and noise covariance W.
struct Transition {
  Eigen::Matrix<double, 15, 15> F;
  Eigen::Matrix<double, 15, 12> G;
  Eigen::Matrix<double, 12, 12> W;
};

inline Transition transition(const FilterState& s, const ImuSample& sample, double dt,
                             const NoiseConfig& noise) {
  const Vec3 w_hat = (sample.gyro - s.bg) * dt;
  const Vec3 a_hat = sample.accel - s.ba;
  const Mat3 R_next = s.R.matrix() * exp_so3(w_hat).matrix();
  const Mat3 Jr = right_jacobian_so3(w_hat);
  const Mat3 Ra_skew = skew(s.R.matrix() * a_hat);
  const Mat3 I = Mat3::Identity();

  Transition t;
  t.F.setIdentity();
  t.F.block<3, 3>(kTheta, kBg) = -R_next * Jr * dt;
  t.F.block<3, 3>(kVel, kTheta) = -Ra_skew * dt;
  t.F.block<3, 3>(kVel, kBa) = -s.R.matrix() * dt;
  t.F.block<3, 3>(kPos, kTheta) = -0.5 * dt * dt * Ra_skew;
  t.F.block<3, 3>(kPos, kVel) = I * dt;
  t.F.block<3, 3>(kPos, kBa) = -0.5 * dt * dt * s.R.matrix();

  t.G.setZero();
  t.G.block<3, 3>(kTheta, 0) = -R_next * Jr * dt;
  t.G.block<3, 3>(kVel, 3) = -s.R.matrix() * dt;
  t.G.block<3, 3>(kPos, 3) = -0.5 * dt * dt * s.R.matrix();
  t.G.block<3, 3>(kBg, 6) = I;
  t.G.block<3, 3>(kBa, 9) = I;

  t.W.setZero();
  t.W.diagonal().segment<3>(0).setConstant(noise.sigma_g * noise.sigma_g / dt);
  t.W.diagonal().segment<3>(3).setConstant(noise.sigma_a * noise.sigma_a / dt);
  t.W.diagonal().segment<3>(6).setConstant(noise.sigma_bg * noise.sigma_bg * dt);
  t.W.diagonal().segment<3>(9).setConstant(noise.sigma_ba * noise.sigma_ba * dt);
  return t;
}

/// Mean propagation only (bias-corrected rotation, gravity-added velocity,
/// trapezoidal position; biases held).
inline FilterState propagate_mean(const FilterState& s, const ImuSample& sample, double dt,
                                  const Vec3& gravity) {
  FilterState out = s;
  const Vec3 a_world = s.R * (sample.accel - s.ba);
  out.R = s.R * exp_so3((sample.gyro - s.bg) * dt);
  out.v = s.v + gravity * dt + a_world * dt;
  out.p = s.p + 0.5 * dt * (out.v + s.v);
  return out;
}

inline Belief propagate(const Belief& b, const ImuSample& sample, double dt, const NoiseConfig& noise) {
  if (!sample.finite() || !std::isfinite(dt)) {
    throw Error(ErrorCode::NonFiniteInput, "IMU sample at t=" + std::to_string(sample.t) + " is not finite");
  }
  if (dt <= 0.0) throw Error(ErrorCode::InvalidConfig, "propagation step must be positive");

  const Transition t = transition(b.state, sample, dt, noise);
  Belief out;
  out.state = propagate_mean(b.state, sample, dt, noise.gravity);

  const int n_clones = static_cast<int>(b.state.clones.size());
  const int c = current_offset(n_clones);
  out.P = b.P;
  const Eigen::Matrix<double, 15, 15> Pcc = b.P.block(c, c, kCurrentDim, kCurrentDim);
  out.P.block(c, c, kCurrentDim, kCurrentDim) = t.F * Pcc * t.F.transpose() + t.G * t.W * t.G.transpose();
  if (c > 0) {
    const Eigen::MatrixXd Pkc = b.P.block(0, c, c, kCurrentDim) * t.F.transpose();
    out.P.block(0, c, c, kCurrentDim) = Pkc;
    out.P.block(c, 0, kCurrentDim, c) = Pkc.transpose();
  }
  symmetrize(out.P);
  return out;
}

/// Drops the oldest clone and appends the current pose as the newest one,
/// carrying its exact cross-covariances.
inline Belief clone_pose(const Belief& b) {
  const int n_clones = static_cast<int>(b.state.clones.size());
  const int n = dim(n_clones);
  const int c = current_offset(n_clones);

  Belief out;
  out.state = b.state;
  out.state.clones.erase(out.state.clones.begin());
  out.state.clones.push_back(Pose{b.state.R, b.state.p});

  // Selector J maps old error to new error: new clone k <- old clone k+1,
  // newest clone <- current (theta, p), current <- current.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k + 1 < n_clones; ++k) {
    J.block<6, 6>(clone_offset(k), clone_offset(k + 1)).setIdentity();
  }
  const int newest = clone_offset(n_clones - 1);
  J.block<3, 3>(newest, c + kTheta).setIdentity();
  J.block<3, 3>(newest + 3, c + kPos).setIdentity();
  J.block(c, c, kCurrentDim, kCurrentDim).setIdentity();

  out.P = J * b.P * J.transpose();
  symmetrize(out.P);
  return out;
}

struct MeasurementModel {
  Vec3 h = Vec3::Zero();
  Eigen::MatrixXd H;  // 3 x dim
};

/// Predicted displacement of the current position relative to clone
/// `clone_index`, expressed in that clone's frame, and its Jacobian.
inline MeasurementModel measurement_model(const FilterState& s, int clone_index, MeasurementFrame frame) {
  const int n_clones = static_cast<int>(s.clones.size());
  if (clone_index < 0 || clone_index >= n_clones) {
    throw Error(ErrorCode::InvalidConfig, "clone index " + std::to_string(clone_index) + " out of range");
  }
  const Pose& ci = s.clones[clone_index];
  const Vec3 dp = s.p - ci.p;
  const int off = clone_offset(clone_index);
  const int c = current_offset(n_clones);

  MeasurementModel m;
  m.H = Eigen::MatrixXd::Zero(3, dim(n_clones));
  if (frame == MeasurementFrame::Full) {
    const Mat3 Rt = ci.R.matrix().transpose();
    m.h = Rt * dp;
    m.H.block<3, 3>(0, off) = Rt * skew(dp);
    m.H.block<3, 3>(0, off + 3) = -Rt;
    m.H.block<3, 3>(0, c + kPos) = Rt;
  } else {
    const Mat3& R = ci.R.matrix();
    const Mat3 Rt = yaw_part(ci.R).matrix().transpose();
    m.h = Rt * dp;
    // yaw = atan2(R10, R00); derivative under left perturbation exp(theta) R
    const double c2 = R(0, 0) * R(0, 0) + R(1, 0) * R(1, 0);
    const Eigen::RowVector3d dyaw(-R(0, 0) * R(2, 0) / c2, -R(1, 0) * R(2, 0) / c2, 1.0);
    m.H.block<3, 3>(0, off) = Rt * skew(dp) * Vec3::UnitZ() * dyaw;
    m.H.block<3, 3>(0, off + 3) = -Rt;
    m.H.block<3, 3>(0, c + kPos) = Rt;
  }
  return m;
}

/// Residual h(X) - d_hat.
inline Vec3 measurement_residual(const FilterState& s, const DisplacementEstimate& meas, int clone_index,
                                 MeasurementFrame frame) {
  return measurement_model(s, clone_index, frame).h - meas.d;
}

/// Applies an error-state correction: rotations via exp_so3 on the left,
/// everything else by addition.
inline FilterState inject(const FilterState& s, const Eigen::VectorXd& dx) {
  FilterState out = s;
  const int n_clones = static_cast<int>(s.clones.size());
  for (int k = 0; k < n_clones; ++k) {
    const int off = clone_offset(k);
    out.clones[k].R = exp_so3(dx.segment<3>(off)) * s.clones[k].R;
    out.clones[k].p = s.clones[k].p + dx.segment<3>(off + 3);
  }
  const int c = current_offset(n_clones);
  out.R = exp_so3(dx.segment<3>(c + kTheta)) * s.R;
  out.v += dx.segment<3>(c + kVel);
  out.p += dx.segment<3>(c + kPos);
  out.bg += dx.segment<3>(c + kBg);
  out.ba += dx.segment<3>(c + kBa);
  return out;
}

inline constexpr double kMaxInnovationCondition = 1e12;

/// Kalman update with a window displacement; covariance in Joseph form.
inline Belief measurement_update(const Belief& b, const DisplacementEstimate& meas, int clone_index,
                                 MeasurementFrame frame = MeasurementFrame::YawOnly) {
  if (!meas.d.allFinite() || !is_spd(meas.cov)) {
    throw Error(ErrorCode::NonPDMeasurementCovariance, "measurement covariance is not symmetric positive definite");
  }
  const MeasurementModel m = measurement_model(b.state, clone_index, frame);
  const Eigen::MatrixXd PHt = b.P * m.H.transpose();
  Mat3 S = m.H * PHt + meas.cov;
  S = 0.5 * (S + S.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Mat3> eig(S);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxInnovationCondition) {
    throw Error(ErrorCode::SingularInnovation, "innovation covariance is singular or ill-conditioned");
  }

  const Eigen::MatrixXd K = PHt * S.inverse();
  const Vec3 r = m.h - meas.d;
  const Eigen::VectorXd dx = -K * r;

  Belief out;
  out.state = inject(b.state, dx);
  const Eigen::MatrixXd IKH = Eigen::MatrixXd::Identity(b.P.rows(), b.P.cols()) - K * m.H;
  out.P = IKH * b.P * IKH.transpose() + K * meas.cov * K.transpose();
  symmetrize(out.P);
  return out;
}

}  // namespace ekf

/// Rotates every sample of `window` by the tilt (yaw-removed) part of
/// `attitude`, so the result is gravity-aligned but heading-free.
inline ImuWindow rotate_window(const ImuWindow& window, const Rotation& attitude) {
  const Mat3 tilt = tilt_part(attitude).matrix();
  ImuWindow out = window;
  for (auto& s : out) {
    s.gyro = tilt * s.gyro;
    s.accel = tilt * s.accel;
  }
  return out;
}

/// Filter run configuration, read from a `key = value` file.
struct FilterConfig {
  NoiseConfig noise;
  int n_clones = 10;
  int window = 200;         // samples per network window
  int update_stride = 20;   // samples between window starts
  double rate = 200.0;      // Hz
  MeasurementFrame frame = MeasurementFrame::YawOnly;
  // initial 1-sigma uncertainties
  double init_sigma_rot = 1e-3;
  double init_sigma_vel = 1e-2;
  double init_sigma_pos = 1e-3;
  double init_sigma_bg = 1e-3;
  double init_sigma_ba = 0.1;

  Eigen::MatrixXd initial_covariance() const {
    Eigen::VectorXd d(15);
    d << Vec3::Constant(init_sigma_rot * init_sigma_rot), Vec3::Constant(init_sigma_vel * init_sigma_vel),
        Vec3::Constant(init_sigma_pos * init_sigma_pos), Vec3::Constant(init_sigma_bg * init_sigma_bg),
        Vec3::Constant(init_sigma_ba * init_sigma_ba);
    return d.asDiagonal();
  }

  void validate() const {
    if (!noise.valid()) throw Error(ErrorCode::InvalidConfig, "noise densities must be >= 0");
    if (window < 2 || update_stride < 1 || rate <= 0.0 || n_clones < 1) {
      throw Error(ErrorCode::InvalidConfig, "window, stride, rate and clone count must be positive");
    }
    if (window % update_stride != 0 || window / update_stride > n_clones) {
      throw Error(ErrorCode::InvalidConfig,
                  "window must be a multiple of update_stride and clones >= window / update_stride");
    }
  }

  static FilterConfig from(const KeyValueFile& kv) {
    FilterConfig c;
    c.noise.sigma_g = kv.get_double("sigma_g", c.noise.sigma_g);
    c.noise.sigma_a = kv.get_double("sigma_a", c.noise.sigma_a);
    c.noise.sigma_bg = kv.get_double("sigma_bg", c.noise.sigma_bg);
    c.noise.sigma_ba = kv.get_double("sigma_ba", c.noise.sigma_ba);
    if (kv.has("gravity")) {
      const auto g = kv.get_doubles("gravity");
      if (g.size() != 3) throw Error(ErrorCode::InvalidConfig, "gravity needs three components");
      c.noise.gravity = Vec3(g[0], g[1], g[2]);
    }
    c.n_clones = static_cast<int>(kv.get_int("clones", c.n_clones));
    c.window = static_cast<int>(kv.get_int("window", c.window));
    c.update_stride = static_cast<int>(kv.get_int("update_stride", c.update_stride));
    c.rate = kv.get_double("rate", c.rate);
    const std::string frame = kv.get("measurement_frame", "yaw");
    if (frame == "yaw") {
      c.frame = MeasurementFrame::YawOnly;
    } else if (frame == "full") {
      c.frame = MeasurementFrame::Full;
    } else {
      throw Error(ErrorCode::InvalidConfig, "measurement_frame must be 'yaw' or 'full'");
    }
    c.init_sigma_rot = kv.get_double("init_sigma_rot", c.init_sigma_rot);
    c.init_sigma_vel = kv.get_double("init_sigma_vel", c.init_sigma_vel);
    c.init_sigma_pos = kv.get_double("init_sigma_pos", c.init_sigma_pos);
    c.init_sigma_bg = kv.get_double("init_sigma_bg", c.init_sigma_bg);
    c.init_sigma_ba = kv.get_double("init_sigma_ba", c.init_sigma_ba);
    c.validate();
    return c;
  }

  static FilterConfig load(const std::string& path) { return from(KeyValueFile::load(path)); }
};

}  // namespace xio

#pragma once

// Synthetic trajectories, their exact IMU readings, IMU noise corruption and
// the `xio-v1` columnar dataset format.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "xio/error.hpp"
#include "xio/geometry.hpp"
#include "xio/imu.hpp"

namespace xio {

struct TrajectorySample {
  double t = 0.0;
  Rotation R;
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

/// Time-ordered poses. Velocities satisfy p[k+1] = p[k] + dt/2 (v[k] + v[k+1]),
/// which is what the filter's trapezoidal position update assumes.
struct Trajectory {
  std::vector<TrajectorySample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  const TrajectorySample& operator[](std::size_t k) const { return samples[k]; }
  TrajectorySample& operator[](std::size_t k) { return samples[k]; }
  double start_time() const { return samples.front().t; }
  double end_time() const { return samples.back().t; }
  double duration() const { return empty() ? 0.0 : end_time() - start_time(); }

  /// Pose at time `t`: position and velocity linear, rotation geodesic.
  /// Outside the covered span the end segments are extended when
  /// `extrapolate` is set, otherwise NoOverlap is thrown.
  TrajectorySample at(double t, bool extrapolate = false) const {
    if (samples.size() < 2) throw Error(ErrorCode::InsufficientData, "trajectory needs at least two samples");
    constexpr double kSlack = 1e-9;
    if (!extrapolate && (t < start_time() - kSlack || t > end_time() + kSlack)) {
      throw Error(ErrorCode::NoOverlap, "time " + std::to_string(t) + " outside trajectory span");
    }
    auto it = std::upper_bound(samples.begin(), samples.end(), t,
                               [](double x, const TrajectorySample& s) { return x < s.t; });
    std::size_t k = static_cast<std::size_t>(std::distance(samples.begin(), it));
    k = std::clamp<std::size_t>(k, 1, samples.size() - 1);
    const TrajectorySample& a = samples[k - 1];
    const TrajectorySample& b = samples[k];
    const double s = (t - a.t) / (b.t - a.t);
    TrajectorySample out;
    out.t = t;
    if (s == 0.0) return TrajectorySample{t, a.R, a.p, a.v};
    if (s == 1.0) return TrajectorySample{t, b.R, b.p, b.v};
    out.R = slerp(a.R, b.R, s);
    out.p = a.p + s * (b.p - a.p);
    out.v = a.v + s * (b.v - a.v);
    return out;
  }
};

/// Replaces velocities by the sequence that makes trapezoidal integration
/// reproduce the positions exactly. The initial value is shifted by half
/// the first trapezoid defect so the recursion carries no Nyquist ripple.
inline void make_velocities_consistent(Trajectory& traj) {
  const std::size_t n = traj.size();
  if (n < 2) return;
  auto defect = [&](std::size_t k) -> Vec3 {
    const double dt = traj[k + 1].t - traj[k].t;
    return traj[k].v + traj[k + 1].v - 2.0 * (traj[k + 1].p - traj[k].p) / dt;
  };
  Vec3 v = traj[0].v - 0.5 * defect(0);
  traj[0].v = v;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double dt = traj[k + 1].t - traj[k].t;
    v = 2.0 * (traj[k + 1].p - traj[k].p) / dt - v;
    traj[k + 1].v = v;
  }
}

// ---------------------------------------------------------------------------
// Trajectory synthesis

enum class TrajectoryKind { Circle, FigureEight, HumanGait, QuadrupedGait };

inline const char* to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::Circle: return "circle";
    case TrajectoryKind::FigureEight: return "figure-eight";
    case TrajectoryKind::HumanGait: return "human-gait";
    case TrajectoryKind::QuadrupedGait: return "quadruped-gait";
  }
  return "?";
}

inline TrajectoryKind parse_trajectory_kind(const std::string& s) {
  if (s == "circle") return TrajectoryKind::Circle;
  if (s == "figure-eight") return TrajectoryKind::FigureEight;
  if (s == "human-gait") return TrajectoryKind::HumanGait;
  if (s == "quadruped-gait") return TrajectoryKind::QuadrupedGait;
  throw Error(ErrorCode::InvalidConfig, "unknown trajectory kind '" + s + "'");
}

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Circle;
  double duration = 10.0;       // s
  double speed = 1.0;           // m/s
  double gait_frequency = 2.0;  // Hz
  double radius = 5.0;          // m, circle and figure-eight size
  double rate = 200.0;          // Hz
  std::uint64_t seed = 0;

  void validate() const {
    if (!(duration > 0.0) || !(speed >= 0.0) || !(rate > 0.0) || !(radius > 0.0) || !(gait_frequency > 0.0)) {
      throw Error(ErrorCode::InvalidConfig, "trajectory spec needs duration > 0, speed >= 0, rate > 0");
    }
  }
};

namespace detail {

inline Rotation attitude(double yaw, double pitch, double roll) {
  return exp_so3(Vec3(0, 0, yaw)) * exp_so3(Vec3(0, pitch, 0)) * exp_so3(Vec3(roll, 0, 0));
}

inline double smootherstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * x * (x * (6.0 * x - 15.0) + 10.0);
}

/// Integrates planar kinematics y' = f(t) on the output grid with RK4
/// sub-steps; f returns (vx, vy, yaw_rate) in the world frame.
inline std::vector<Vec3> integrate_planar(const std::function<Vec3(double, const Vec3&)>& f, int n, double dt,
                                          const Vec3& y0) {
  constexpr int kSub = 8;
  const double h = dt / kSub;
  std::vector<Vec3> out(static_cast<std::size_t>(n));
  Vec3 y = y0;
  out[0] = y;
  for (int k = 0; k + 1 < n; ++k) {
    double t = k * dt;
    for (int s = 0; s < kSub; ++s) {
      const Vec3 k1 = f(t, y);
      const Vec3 k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
      const Vec3 k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
      const Vec3 k4 = f(t + h, y + h * k3);
      y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t += h;
    }
    out[static_cast<std::size_t>(k) + 1] = y;
  }
  return out;
}

/// Asymmetric gait waveform with zero mean: its negation is not a phase
/// shift of itself, so forward and backward motion look different.
inline double gait_wave(double phase) { return std::sin(phase) + 0.5 * std::cos(2.0 * phase); }

struct QuadrupedCommand {
  double start = 0.0;
  Eigen::Vector2d v_body = Eigen::Vector2d::Zero();
  double yaw_rate = 0.0;
};

}  // namespace detail

/// Closed-form (circle, figure-eight) or numerically integrated (gait kinds)
/// ground-truth trajectory sampled at spec.rate.
inline Trajectory synth_trajectory(const TrajectorySpec& spec) {
  spec.validate();
  const int n = static_cast<int>(std::llround(spec.duration * spec.rate));
  const double dt = 1.0 / spec.rate;
  const double s = spec.speed;
  Trajectory traj;
  traj.samples.resize(static_cast<std::size_t>(n));
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * unit(rng); };

  switch (spec.kind) {
    case TrajectoryKind::Circle: {
      const double r = spec.radius;
      for (int k = 0; k < n; ++k) {
        const double t = k * dt;
        const double th = s * t / r;
        auto& smp = traj.samples[static_cast<std::size_t>(k)];
        smp.t = t;
        smp.p = Vec3(r * std::sin(th), r * (1.0 - std::cos(th)), 0.0);
        smp.v = Vec3(s * std::cos(th), s * std::sin(th), 0.0);
        smp.R = rot_z(th);
      }
      break;
    }
    case TrajectoryKind::FigureEight: {
      const double a = spec.radius;
      const double w = s / a;
      for (int k = 0; k < n; ++k) {
        const double t = k * dt;
        auto& smp = traj.samples[static_cast<std::size_t>(k)];
        smp.t = t;
        smp.p = Vec3(a * std::sin(w * t), 0.5 * a * std::sin(2.0 * w * t), 0.0);
        smp.v = Vec3(a * w * std::cos(w * t), a * w * std::cos(2.0 * w * t), 0.0);
        smp.R = s > 0.0 ? rot_z(std::atan2(smp.v.y(), smp.v.x())) : Rotation();
      }
      break;
    }
    case TrajectoryKind::HumanGait: {
      const double f = spec.gait_frequency;
      const double wg = 2.0 * std::numbers::pi * f;
      const double phase0 = uni(0.0, 2.0 * std::numbers::pi);
      const double yaw0 = uni(-std::numbers::pi, std::numbers::pi);
      std::array<double, 2> amp{}, freq{}, off{};
      for (int m = 0; m < 2; ++m) {
        amp[m] = uni(0.2, 0.8);
        freq[m] = uni(0.02, 0.08);
        off[m] = uni(0.0, 2.0 * std::numbers::pi);
      }
      auto heading = [&](double t) {
        double y = yaw0;
        for (int m = 0; m < 2; ++m) y += amp[m] * std::sin(2.0 * std::numbers::pi * freq[m] * t + off[m]);
        return y;
      };
      const double sway = 0.03 * s;
      auto body_velocity = [&](double t) {
        const double ph = wg * t + phase0;
        return Eigen::Vector2d(s * (1.0 + 0.15 * detail::gait_wave(ph)), sway * 0.5 * wg * std::cos(0.5 * ph));
      };
      auto rhs = [&](double t, const Vec3&) {
        const Eigen::Vector2d vb = body_velocity(t);
        const double c = std::cos(heading(t)), sn = std::sin(heading(t));
        return Vec3(c * vb.x() - sn * vb.y(), sn * vb.x() + c * vb.y(), 0.0);
      };
      const auto xy = detail::integrate_planar(rhs, n, dt, Vec3::Zero());
      const double bob = 0.01 + 0.03 * s;
      for (int k = 0; k < n; ++k) {
        const double t = k * dt;
        const double ph = wg * t + phase0;
        auto& smp = traj.samples[static_cast<std::size_t>(k)];
        smp.t = t;
        const Vec3 vxy = rhs(t, Vec3::Zero());
        smp.p = Vec3(xy[k].x(), xy[k].y(), bob * std::sin(ph));
        smp.v = Vec3(vxy.x(), vxy.y(), bob * wg * std::cos(ph));
        smp.R = detail::attitude(heading(t) + 0.04 * std::sin(ph), 0.02 * std::sin(ph + 0.5),
                                 0.03 * std::sin(0.5 * ph));
      }
      break;
    }
    case TrajectoryKind::QuadrupedGait: {
      const double f = spec.gait_frequency;
      const double wg = 2.0 * std::numbers::pi * f;
      const double phase0 = uni(0.0, 2.0 * std::numbers::pi);
      const double yaw0 = uni(-std::numbers::pi, std::numbers::pi);
      static const std::array<Eigen::Vector2d, 8> kDirections = {
          Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 0), Eigen::Vector2d(-1, 0), Eigen::Vector2d(0, 1),
          Eigen::Vector2d(0, -1), Eigen::Vector2d(std::sqrt(0.5), std::sqrt(0.5)),
          Eigen::Vector2d(std::sqrt(0.5), -std::sqrt(0.5)), Eigen::Vector2d(-std::sqrt(0.5), std::sqrt(0.5))};
      std::vector<detail::QuadrupedCommand> cmds;
      for (double t0 = 0.0; t0 < spec.duration + 5.0; t0 += uni(2.0, 4.0)) {
        detail::QuadrupedCommand c;
        c.start = t0;
        const auto idx = static_cast<std::size_t>(unit(rng) * kDirections.size()) % kDirections.size();
        c.v_body = s * uni(0.6, 1.2) * kDirections[idx];
        c.yaw_rate = uni(-0.5, 0.5);
        cmds.push_back(c);
      }
      constexpr double kBlend = 0.5;
      auto command = [&](double t) {
        std::size_t i = 0;
        while (i + 1 < cmds.size() && cmds[i + 1].start <= t) ++i;
        detail::QuadrupedCommand c = cmds[i];
        if (i > 0) {
          const double a = detail::smootherstep((t - cmds[i].start) / kBlend);
          c.v_body = cmds[i - 1].v_body + a * (cmds[i].v_body - cmds[i - 1].v_body);
          c.yaw_rate = cmds[i - 1].yaw_rate + a * (cmds[i].yaw_rate - cmds[i - 1].yaw_rate);
        }
        return c;
      };
      auto rhs = [&](double t, const Vec3& y) {
        const auto c = command(t);
        const double ph = wg * t + phase0;
        const Eigen::Vector2d vb = c.v_body * (1.0 + 0.2 * detail::gait_wave(ph));
        const double cs = std::cos(y.z()), sn = std::sin(y.z());
        return Vec3(cs * vb.x() - sn * vb.y(), sn * vb.x() + cs * vb.y(), c.yaw_rate);
      };
      const auto xyh = detail::integrate_planar(rhs, n, dt, Vec3(0.0, 0.0, yaw0));
      const double bob = 0.015 + 0.01 * s;
      for (int k = 0; k < n; ++k) {
        const double t = k * dt;
        const double ph = wg * t + phase0;
        auto& smp = traj.samples[static_cast<std::size_t>(k)];
        smp.t = t;
        const Vec3 d = rhs(t, xyh[k]);
        smp.p = Vec3(xyh[k].x(), xyh[k].y(), bob * (std::sin(ph) + 0.3 * std::sin(2.0 * ph + 0.5)));
        smp.v = Vec3(d.x(), d.y(), bob * wg * (std::cos(ph) + 0.6 * std::cos(2.0 * ph + 0.5)));
        smp.R = detail::attitude(xyh[k].z() + 0.03 * std::sin(ph), 0.03 * std::sin(ph + 1.0), 0.04 * std::sin(ph));
      }
      break;
    }
  }
  make_velocities_consistent(traj);
  return traj;
}

// ---------------------------------------------------------------------------
// IMU synthesis and corruption

/// Noise-free IMU readings whose propagation through the filter's discrete
/// kinematics reproduces `traj` sample for sample. Sample k drives the step
/// from t_k to t_{k+1}; the last sample repeats the previous reading.
inline ImuStream derive_imu(const Trajectory& traj, const Vec3& gravity = default_gravity()) {
  const std::size_t n = traj.size();
  if (n < 2) throw Error(ErrorCode::InsufficientData, "need at least two trajectory samples");
  ImuStream out(n);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double dt = traj[k + 1].t - traj[k].t;
    out[k].t = traj[k].t;
    out[k].gyro = log_so3(traj[k].R.inverse() * traj[k + 1].R) / dt;
    out[k].accel = traj[k].R.inverse() * ((traj[k + 1].v - traj[k].v) / dt - gravity);
  }
  out[n - 1] = out[n - 2];
  out[n - 1].t = traj[n - 1].t;
  return out;
}

struct ImuNoiseSpec {
  double sigma_g = 0.0;
  double sigma_a = 0.0;
  double sigma_bg = 0.0;
  double sigma_ba = 0.0;
  Vec3 bg0 = Vec3::Zero();
  Vec3 ba0 = Vec3::Zero();
  std::uint64_t seed = 0;
};

/// Adds white noise (density / sqrt(dt)) and random-walk biases. Gyro and
/// accelerometer draw from independent streams; a channel with zero noise
/// and zero bias is left bit-identical.
inline ImuStream corrupt(const ImuStream& stream, const ImuNoiseSpec& noise) {
  if (noise.sigma_g < 0 || noise.sigma_a < 0 || noise.sigma_bg < 0 || noise.sigma_ba < 0) {
    throw Error(ErrorCode::InvalidConfig, "noise densities must be >= 0");
  }
  ImuStream out = stream;
  std::mt19937_64 rng_g(noise.seed * 4 + 1), rng_a(noise.seed * 4 + 2);
  std::mt19937_64 rng_bg(noise.seed * 4 + 3), rng_ba(noise.seed * 4 + 4);
  // one distribution per stream: normal_distribution caches a second draw
  std::normal_distribution<double> n_g, n_a, n_bg, n_ba;
  const bool touch_g = noise.sigma_g > 0 || noise.sigma_bg > 0 || !noise.bg0.isZero();
  const bool touch_a = noise.sigma_a > 0 || noise.sigma_ba > 0 || !noise.ba0.isZero();
  Vec3 bg = noise.bg0, ba = noise.ba0;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double dt = k + 1 < out.size() ? out[k + 1].t - out[k].t : (k > 0 ? out[k].t - out[k - 1].t : 0.005);
    if (touch_g) {
      Vec3 w = bg;
      if (noise.sigma_g > 0) {
        for (int i = 0; i < 3; ++i) w(i) += noise.sigma_g / std::sqrt(dt) * n_g(rng_g);
      }
      out[k].gyro += w;
      if (noise.sigma_bg > 0) {
        for (int i = 0; i < 3; ++i) bg(i) += noise.sigma_bg * std::sqrt(dt) * n_bg(rng_bg);
      }
    }
    if (touch_a) {
      Vec3 a = ba;
      if (noise.sigma_a > 0) {
        for (int i = 0; i < 3; ++i) a(i) += noise.sigma_a / std::sqrt(dt) * n_a(rng_a);
      }
      out[k].accel += a;
      if (noise.sigma_ba > 0) {
        for (int i = 0; i < 3; ++i) ba(i) += noise.sigma_ba * std::sqrt(dt) * n_ba(rng_ba);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// xio-v1 columnar files

struct Dataset {
  ImuStream imu;
  Trajectory gt;  // empty for inference-only files
  double source_rate = 200.0;
};

inline constexpr double kTargetRate = 200.0;

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  return s.substr(b);
}

/// Central-difference velocities (one-sided at the ends).
inline void fill_velocities(Trajectory& traj) {
  const std::size_t n = traj.size();
  if (n < 2) return;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = k == 0 ? 0 : k - 1;
    const std::size_t b = k + 1 == n ? n - 1 : k + 1;
    traj[k].v = (traj[b].p - traj[a].p) / (traj[b].t - traj[a].t);
  }
}

}  // namespace detail

inline const char* kImuColumns = "t,wx,wy,wz,ax,ay,az";
inline const char* kPoseColumns = "qw,qx,qy,qz,px,py,pz";

inline void save_dataset(const std::string& path, const ImuStream& imu, const Trajectory* gt,
                         double rate = kTargetRate) {
  if (gt && gt->size() != imu.size()) {
    throw Error(ErrorCode::LengthMismatch, "ground truth and IMU must have one row each per sample");
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingArtifact, "cannot write " + path);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", rate);
  out << "# xio-v1 rate=" << buf << "\n" << kImuColumns;
  if (gt) out << "," << kPoseColumns;
  out << "\n";
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    out << buf;
  };
  for (std::size_t k = 0; k < imu.size(); ++k) {
    const ImuSample& s = imu[k];
    num(s.t);
    for (int i = 0; i < 3; ++i) out << ",", num(s.gyro(i));
    for (int i = 0; i < 3; ++i) out << ",", num(s.accel(i));
    if (gt) {
      const auto q = to_quaternion((*gt)[k].R);
      for (double c : {q.w(), q.x(), q.y(), q.z()}) out << ",", num(c);
      for (int i = 0; i < 3; ++i) out << ",", num((*gt)[k].p(i));
    }
    out << "\n";
  }
}

/// Parses an xio-v1 file and resamples it to 200 Hz when needed. Output
/// rows keep the sample count implied by the source rate (N * 200 / rate);
/// the final half-step beyond the last source row extends the last segment.
inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifact, "cannot open dataset " + path);
  auto fail = [&](int line, const std::string& what) {
    throw Error(ErrorCode::MalformedFile, path + ":" + std::to_string(line) + ": " + what);
  };

  std::string line;
  int line_no = 1;
  if (!std::getline(in, line)) fail(1, "empty file");
  line = detail::trim(line);
  const std::string magic = "# xio-v1 rate=";
  if (line.rfind(magic, 0) != 0) fail(1, "expected header '# xio-v1 rate=<Hz>'");
  double rate = 0.0;
  try {
    std::size_t used = 0;
    rate = std::stod(line.substr(magic.size()), &used);
    if (used != line.size() - magic.size()) throw std::invalid_argument("rate");
  } catch (const std::exception&) {
    fail(1, "bad rate in header");
  }
  if (!(rate > 0.0) || !std::isfinite(rate)) fail(1, "rate must be positive");

  ++line_no;
  if (!std::getline(in, line)) fail(line_no, "missing column header");
  line = detail::trim(line);
  const std::string imu_only = kImuColumns;
  const std::string with_pose = imu_only + "," + kPoseColumns;
  bool has_pose = false;
  if (line == with_pose) {
    has_pose = true;
  } else if (line != imu_only) {
    fail(line_no, "unexpected columns '" + line + "'");
  }
  const std::size_t ncols = has_pose ? 14 : 7;

  Dataset ds;
  ds.source_rate = rate;
  ImuStream imu;
  Trajectory gt;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != ncols) {
      fail(line_no, "expected " + std::to_string(ncols) + " columns, got " + std::to_string(cells.size()));
    }
    std::array<double, 14> v{};
    for (std::size_t c = 0; c < ncols; ++c) {
      try {
        std::size_t used = 0;
        v[c] = std::stod(cells[c], &used);
        if (used != cells[c].size()) throw std::invalid_argument(cells[c]);
      } catch (const std::exception&) {
        fail(line_no, "cannot parse value '" + cells[c] + "'");
      }
      if (!std::isfinite(v[c])) fail(line_no, "non-finite value");
    }
    if (!imu.empty() && !(v[0] > imu.back().t)) fail(line_no, "timestamps must be strictly increasing");
    imu.push_back(ImuSample{v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
    if (has_pose) {
      const double qn = std::sqrt(v[7] * v[7] + v[8] * v[8] + v[9] * v[9] + v[10] * v[10]);
      if (qn < 1e-9) fail(line_no, "zero quaternion");
      TrajectorySample s;
      s.t = v[0];
      s.R = from_quaternion(v[7], v[8], v[9], v[10]);
      s.p = Vec3(v[11], v[12], v[13]);
      gt.samples.push_back(s);
    }
  }
  if (imu.size() < 2) fail(line_no, "need at least two samples");

  if (std::abs(rate - kTargetRate) < 1e-9) {
    ds.imu = std::move(imu);
    ds.gt = std::move(gt);
  } else {
    const auto count = static_cast<std::size_t>(std::llround(imu.size() * kTargetRate / rate));
    const double t0 = imu.front().t;
    std::size_t seg = 1;
    for (std::size_t k = 0; k < count; ++k) {
      const double t = t0 + k / kTargetRate;
      while (seg + 1 < imu.size() && imu[seg].t < t) ++seg;
      const ImuSample& a = imu[seg - 1];
      const ImuSample& b = imu[seg];
      const double s = (t - a.t) / (b.t - a.t);
      ds.imu.push_back(ImuSample{t, a.gyro + s * (b.gyro - a.gyro), a.accel + s * (b.accel - a.accel)});
      if (has_pose) ds.gt.samples.push_back(gt.at(t, true));
    }
  }
  if (has_pose) {
    detail::fill_velocities(ds.gt);
    make_velocities_consistent(ds.gt);
  }
  return ds;
}

}  // namespace xio

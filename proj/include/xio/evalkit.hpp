#pragma once

// Trajectory alignment, ATE / RTE, 3-sigma coverage, reports and top-down
// SVG plots.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "xio/error.hpp"
#include "xio/geometry.hpp"
#include "xio/simkit.hpp"

namespace xio {

struct AlignedPair {
  Trajectory est;  // resampled onto gt timestamps, then aligned
  Trajectory gt;   // gt samples inside the estimate's time span
};

/// Resamples `est` onto the timestamps of `gt` that it covers and applies
/// the yaw + translation that puts its first pose on gt's first pose.
inline AlignedPair align_pair(const Trajectory& est, const Trajectory& gt) {
  if (est.size() < 2 || gt.empty()) throw Error(ErrorCode::NoOverlap, "empty trajectory");
  constexpr double kSlack = 1e-9;
  AlignedPair out;
  for (const auto& s : gt.samples) {
    if (s.t >= est.start_time() - kSlack && s.t <= est.end_time() + kSlack) {
      out.gt.samples.push_back(s);
      out.est.samples.push_back(est.at(std::clamp(s.t, est.start_time(), est.end_time())));
      out.est.samples.back().t = s.t;
    }
  }
  if (out.gt.empty()) throw Error(ErrorCode::NoOverlap, "estimate and ground truth do not overlap in time");
  const TrajectorySample& e0 = out.est[0];
  const TrajectorySample& g0 = out.gt[0];
  const Rotation yaw = rot_z(yaw_of(g0.R) - yaw_of(e0.R));
  const Vec3 origin = e0.p;
  for (auto& s : out.est.samples) {
    s.p = yaw * (s.p - origin) + g0.p;
    s.v = yaw * s.v;
    s.R = yaw * s.R;
  }
  return out;
}

inline Trajectory align(const Trajectory& est, const Trajectory& gt) { return align_pair(est, gt).est; }

/// RMS of pointwise position distances.
inline double ate(const Trajectory& est, const Trajectory& gt) {
  if (est.size() != gt.size()) {
    throw Error(ErrorCode::LengthMismatch, "ATE needs equal-length trajectories (" + std::to_string(est.size()) +
                                               " vs " + std::to_string(gt.size()) + ")");
  }
  if (est.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t k = 0; k < est.size(); ++k) s += (est[k].p - gt[k].p).squaredNorm();
  return std::sqrt(s / static_cast<double>(est.size()));
}

struct RteResult {
  double value = 0.0;      // m
  double window = 0.0;     // s, the span actually used
  long n_windows = 0;
  bool shortened = false;  // sequence shorter than the requested window
};

/// RMS over every start index of the relative-displacement error across
/// `window` seconds. Sequences shorter than the window use their full span.
inline RteResult rte_detail(const Trajectory& est, const Trajectory& gt, double window = 60.0) {
  if (est.size() != gt.size()) throw Error(ErrorCode::LengthMismatch, "RTE needs equal-length trajectories");
  if (gt.size() < 2 || gt.duration() < 1.0 - 1e-9) {
    throw Error(ErrorCode::SequenceTooShort, "RTE needs at least 1 s of data");
  }
  const double dt = gt.duration() / static_cast<double>(gt.size() - 1);
  RteResult r;
  auto steps = static_cast<std::size_t>(std::llround(window / dt));
  if (steps >= gt.size()) {
    steps = gt.size() - 1;
    r.shortened = true;
  }
  r.window = steps * dt;
  double s = 0.0;
  for (std::size_t k = 0; k + steps < gt.size(); ++k) {
    const Vec3 de = est[k + steps].p - est[k].p;
    const Vec3 dg = gt[k + steps].p - gt[k].p;
    s += (de - dg).squaredNorm();
    ++r.n_windows;
  }
  r.value = std::sqrt(s / static_cast<double>(r.n_windows));
  return r;
}

inline double rte(const Trajectory& est, const Trajectory& gt, double window = 60.0) {
  return rte_detail(est, gt, window).value;
}

/// Fraction of samples with |e_i| <= k sigma_i on every axis.
inline double sigma_coverage(const std::vector<Vec3>& errors, const std::vector<Vec3>& sigmas, double k = 3.0) {
  if (errors.size() != sigmas.size()) throw Error(ErrorCode::LengthMismatch, "one sigma per error sample");
  if (errors.empty()) return 1.0;
  std::size_t inside = 0;
  for (std::size_t n = 0; n < errors.size(); ++n) {
    if (!(sigmas[n].array() > 0.0).all()) throw Error(ErrorCode::InvalidConfig, "sigmas must be positive");
    inside += (errors[n].array().abs() <= k * sigmas[n].array()).all();
  }
  return static_cast<double>(inside) / static_cast<double>(errors.size());
}

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
  double ate = 0.0;
  double rte = 0.0;
  long n_points = 0;
  long n_rte_windows = 0;
  double rte_window = 0.0;
  bool rte_shortened = false;
  std::optional<double> sigma3_coverage;
  std::string alignment = "first-pose yaw+translation";

  void write_text(std::ostream& out) const {
    out << "ATE            " << ate << " m\n";
    out << "RTE            " << rte << " m over " << rte_window << " s" << (rte_shortened ? " (full span)" : "")
        << "\n";
    out << "points         " << n_points << "\n";
    out << "RTE windows    " << n_rte_windows << "\n";
    out << "3-sigma cover  ";
    if (sigma3_coverage) {
      out << *sigma3_coverage << "\n";
    } else {
      out << "n/a\n";
    }
    out << "alignment      " << alignment << "\n";
  }

  void write_csv(std::ostream& out) const {
    out << "ate,rte,n_points,n_rte_windows,rte_window,rte_shortened,sigma3_coverage,alignment\n";
    out << ate << "," << rte << "," << n_points << "," << n_rte_windows << "," << rte_window << ","
        << (rte_shortened ? 1 : 0) << ",";
    if (sigma3_coverage) out << *sigma3_coverage;
    out << "," << alignment << "\n";
  }
};

inline MetricReport evaluate(const Trajectory& est, const Trajectory& gt, double rte_window = 60.0) {
  const AlignedPair a = align_pair(est, gt);
  MetricReport r;
  r.ate = ate(a.est, a.gt);
  r.n_points = static_cast<long>(a.gt.size());
  const RteResult rr = rte_detail(a.est, a.gt, rte_window);
  r.rte = rr.value;
  r.n_rte_windows = rr.n_windows;
  r.rte_window = rr.window;
  r.rte_shortened = rr.shortened;
  return r;
}

// ---------------------------------------------------------------------------
// Trajectory files: "# xio-traj v1" then t,qw,qx,qy,qz,px,py,pz

inline void save_trajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingArtifact, "cannot write " + path);
  out << "# xio-traj v1\nt,qw,qx,qy,qz,px,py,pz\n";
  char buf[32];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    out << buf;
  };
  for (const auto& s : traj.samples) {
    const auto q = to_quaternion(s.R);
    num(s.t);
    for (double c : {q.w(), q.x(), q.y(), q.z(), s.p.x(), s.p.y(), s.p.z()}) out << ",", num(c);
    out << "\n";
  }
}

/// Reads a trajectory file, or the ground-truth columns of a dataset file.
inline Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifact, "cannot open trajectory " + path);
  std::string first;
  std::getline(in, first);
  in.close();
  if (first.rfind("# xio-v1", 0) == 0) {
    Dataset ds = load_dataset(path);
    if (ds.gt.empty()) throw Error(ErrorCode::MalformedFile, path + ": dataset has no pose columns");
    return ds.gt;
  }
  in.open(path);
  auto fail = [&](int line, const std::string& what) {
    throw Error(ErrorCode::MalformedFile, path + ":" + std::to_string(line) + ": " + what);
  };
  std::string line;
  int line_no = 0;
  std::getline(in, line);
  ++line_no;
  if (detail::trim(line) != "# xio-traj v1") fail(1, "expected header '# xio-traj v1'");
  std::getline(in, line);
  ++line_no;
  if (detail::trim(line) != "t,qw,qx,qy,qz,px,py,pz") fail(2, "unexpected columns");
  Trajectory traj;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != 8) fail(line_no, "expected 8 columns");
    double v[8];
    for (int c = 0; c < 8; ++c) {
      try {
        std::size_t used = 0;
        v[c] = std::stod(cells[c], &used);
        if (used != cells[c].size()) throw std::invalid_argument(cells[c]);
      } catch (const std::exception&) {
        fail(line_no, "cannot parse value '" + cells[c] + "'");
      }
      if (!std::isfinite(v[c])) fail(line_no, "non-finite value");
    }
    if (!traj.empty() && !(v[0] > traj.samples.back().t)) fail(line_no, "timestamps must be strictly increasing");
    TrajectorySample s;
    s.t = v[0];
    s.R = from_quaternion(v[1], v[2], v[3], v[4]);
    s.p = Vec3(v[5], v[6], v[7]);
    traj.samples.push_back(s);
  }
  if (traj.size() < 2) fail(line_no, "need at least two poses");
  detail::fill_velocities(traj);
  return traj;
}

// ---------------------------------------------------------------------------
// Top-down plot

struct PlotSeries {
  std::string label;
  std::string color;
  const Trajectory* traj = nullptr;
};

inline void write_svg(std::ostream& out, const std::vector<PlotSeries>& series, const std::string& title = "") {
  constexpr double kSize = 800.0, kMargin = 40.0;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (const auto& p : s.traj->samples) {
      xmin = std::min(xmin, p.p.x());
      xmax = std::max(xmax, p.p.x());
      ymin = std::min(ymin, p.p.y());
      ymax = std::max(ymax, p.p.y());
    }
  }
  if (xmin > xmax) xmin = xmax = ymin = ymax = 0.0;
  const double span = std::max({xmax - xmin, ymax - ymin, 1e-6});
  const double scale = (kSize - 2.0 * kMargin) / span;
  auto px = [&](double x) { return kMargin + (x - xmin) * scale; };
  auto py = [&](double y) { return kSize - kMargin - (y - ymin) * scale; };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize
      << "\" viewBox=\"0 0 " << kSize << " " << kSize << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) out << "<text x=\"" << kMargin << "\" y=\"24\" font-size=\"16\">" << title << "</text>\n";
  int row = 0;
  for (const auto& s : series) {
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    const std::size_t stride = std::max<std::size_t>(1, s.traj->size() / 4000);
    for (std::size_t k = 0; k < s.traj->size(); k += stride) {
      out << px((*s.traj)[k].p.x()) << "," << py((*s.traj)[k].p.y()) << " ";
    }
    out << "\"/>\n";
    out << "<text x=\"" << kSize - 200 << "\" y=\"" << 24 + 18 * row << "\" font-size=\"14\" fill=\"" << s.color
        << "\">" << s.label << "</text>\n";
    ++row;
  }
  out << "<text x=\"" << kMargin << "\" y=\"" << kSize - 12 << "\" font-size=\"12\">scale: " << span
      << " m across</text>\n";
  out << "</svg>\n";
}

inline void write_svg(const std::string& path, const std::vector<PlotSeries>& series, const std::string& title = "") {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingArtifact, "cannot write " + path);
  write_svg(out, series, title);
}

}  // namespace xio

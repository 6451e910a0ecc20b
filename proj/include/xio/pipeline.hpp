#pragma once

// The end-to-end loop: propagate the filter on every IMU sample, clone at
// each window start, and when a window completes rotate it with the filter
// attitude, obtain a displacement from a predictor and apply the update.
// run_pipeline() wraps this with file I/O, routing and evaluation.

#include <Eigen/Geometry>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xio/config.hpp"
#include "xio/displacement_net.hpp"
#include "xio/error.hpp"
#include "xio/evalkit.hpp"
#include "xio/geometry.hpp"
#include "xio/imu.hpp"
#include "xio/platform_router.hpp"
#include "xio/simkit.hpp"
#include "xio/state_estimator.hpp"
#include "xio/training.hpp"

namespace xio {

/// A completed window handed to the predictor.
struct WindowRequest {
  long index = 0;         // window counter
  std::size_t first = 0;  // first IMU sample
  std::size_t last = 0;   // last IMU sample
  ImuWindow window;       // already rotated into the tilt frame of the clone
};

using Predictor = std::function<DisplacementEstimate(const WindowRequest&)>;

struct FilterRun {
  Trajectory est;  // one pose per IMU sample
  std::vector<DisplacementEstimate> measurements;
  Belief final;
  long updates = 0;
};

/// Roll and pitch that align the accelerometer reading with +z, zero yaw.
inline Rotation attitude_from_accel(const Vec3& accel) {
  if (!(accel.norm() > 0.0)) return Rotation();
  const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(accel, Vec3::UnitZ());
  return tilt_part(Rotation(q.toRotationMatrix()));
}

/// Runs the filter over `imu`, starting from pose/velocity `init`. With no
/// predictor (or `updates` false) this is plain strapdown integration.
inline FilterRun run_filter(const ImuStream& imu, const TrajectorySample& init, const FilterConfig& cfg,
                            const Predictor& predict, bool updates = true) {
  cfg.validate();
  if (imu.size() < 2) throw Error(ErrorCode::InsufficientData, "need at least two IMU samples");
  const int L = cfg.window, S = cfg.update_stride, n = cfg.n_clones;
  FilterRun run;
  Belief b = ekf::init_state(init.R, init.v, init.p, Vec3::Zero(), Vec3::Zero(), cfg.initial_covariance(), n);
  auto record = [&](double t) {
    run.est.samples.push_back(TrajectorySample{t, b.state.R, b.state.p, b.state.v});
  };
  record(imu.front().t);
  long window_index = 0;
  for (std::size_t m = 0; m < imu.size(); ++m) {
    const bool window_done = m + 1 >= static_cast<std::size_t>(L) && (m + 1 - L) % S == 0;
    if (updates && predict && window_done) {
      const int clone = n - L / S;
      WindowRequest req;
      req.index = window_index++;
      req.first = m + 1 - L;
      req.last = m;
      req.window = rotate_window(ImuWindow(imu.begin() + static_cast<long>(req.first),
                                           imu.begin() + static_cast<long>(m) + 1),
                                 b.state.clones[static_cast<std::size_t>(clone)].R);
      const DisplacementEstimate meas = predict(req);
      b = ekf::measurement_update(b, meas, clone, cfg.frame);
      run.measurements.push_back(meas);
      ++run.updates;
      run.est.samples.back() = TrajectorySample{imu[m].t, b.state.R, b.state.p, b.state.v};
    }
    if (m % static_cast<std::size_t>(S) == 0) b = ekf::clone_pose(b);
    if (m + 1 < imu.size()) {
      b = ekf::propagate(b, imu[m], imu[m + 1].t - imu[m].t, cfg.noise);
      record(imu[m + 1].t);
    }
  }
  run.final = std::move(b);
  return run;
}

/// Ground-truth displacement in the heading frame of the window start.
inline Predictor oracle_predictor(const Trajectory& gt, const ImuStream& imu, double sigma) {
  return [&gt, &imu, sigma](const WindowRequest& req) {
    const TrajectorySample a = gt.at(imu[req.first].t);
    const TrajectorySample c = gt.at(imu[req.last].t);
    DisplacementEstimate e;
    e.d = yaw_part(a.R).inverse() * (c.p - a.p);
    e.cov = Mat3::Identity() * sigma * sigma;
    return e;
  };
}

inline Predictor network_predictor(const DisplacementNet& net) {
  return [&net](const WindowRequest& req) { return net.predict(req.window); };
}

/// Classifies every window and predicts with the matching expert.
inline Predictor routed_predictor(const PlatformClassifier& clf, const std::map<Platform, DisplacementNet>& experts,
                                  RoutingLog* log) {
  return [&clf, &experts, log](const WindowRequest& req) {
    return route(req.window, clf, experts, log, req.index).predict(req.window);
  };
}

// ---------------------------------------------------------------------------
// Run manifest

/// splitmix64 step; gives each module its own stream from one run seed.
inline std::uint64_t fan_out_seed(std::uint64_t seed, std::uint64_t module) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (module + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct RunManifest {
  std::string command = "run";
  std::vector<std::string> inputs;
  std::string output_dir = ".";
  std::string filter_config;  // optional key = value file
  std::string classifier;     // checkpoint paths
  std::string human_expert;
  std::string quadruped_expert;
  std::string expert_override;  // "human" / "quadruped" skips routing
  bool oracle_displacement = false;
  double oracle_sigma = 1e-3;  // m
  bool no_update = false;
  double rte_window = 60.0;  // s
  std::uint64_t seed = 0;

  static RunManifest from(const KeyValueFile& kv) {
    RunManifest m;
    m.command = kv.get("command", m.command);
    m.inputs = kv.get_list("inputs");
    m.output_dir = kv.get("output_dir", m.output_dir);
    m.filter_config = kv.get("filter_config", "");
    m.classifier = kv.get("classifier", "");
    m.human_expert = kv.get("human_expert", "");
    m.quadruped_expert = kv.get("quadruped_expert", "");
    m.expert_override = kv.get("expert", "");
    m.oracle_displacement = kv.get_bool("oracle_displacement", false);
    m.oracle_sigma = kv.get_double("oracle_sigma", m.oracle_sigma);
    m.no_update = kv.get_bool("no_update", false);
    m.rte_window = kv.get_double("rte_window", m.rte_window);
    m.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    return m;
  }

  /// Every referenced artifact must exist before any work starts.
  void validate() const {
    if (inputs.empty()) throw Error(ErrorCode::InvalidConfig, "no input datasets");
    auto need = [](const std::string& path, const std::string& what) {
      if (path.empty()) throw Error(ErrorCode::MissingArtifact, "no " + what + " given");
      if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingArtifact, what + " not found: " + path);
    };
    for (const auto& in : inputs) need(in, "input dataset");
    if (!filter_config.empty()) need(filter_config, "filter config");
    if (no_update || oracle_displacement) return;
    if (expert_override.empty()) {
      need(classifier, "classifier checkpoint");
      need(human_expert, "human expert checkpoint");
      need(quadruped_expert, "quadruped expert checkpoint");
    } else if (parse_platform(expert_override) == Platform::Human) {
      need(human_expert, "human expert checkpoint");
    } else {
      need(quadruped_expert, "quadruped expert checkpoint");
    }
  }
};

struct SequenceResult {
  std::string input;
  std::filesystem::path output_dir;
  std::optional<MetricReport> report;  // absent without ground truth
  FilterRun run;
};

/// Runs every input sequence and writes trajectory.csv, routing.csv,
/// report.txt / report.csv and plot.svg into one directory per sequence.
inline std::vector<SequenceResult> run_pipeline(const RunManifest& manifest) {
  manifest.validate();
  const FilterConfig cfg = manifest.filter_config.empty() ? FilterConfig{} : FilterConfig::load(manifest.filter_config);

  std::optional<PlatformClassifier> clf;
  std::map<Platform, DisplacementNet> experts;
  const bool use_net = !manifest.no_update && !manifest.oracle_displacement;
  if (use_net) {
    if (manifest.expert_override.empty()) {
      clf = load_classifier(manifest.classifier);
      experts.emplace(Platform::Human, load_net(manifest.human_expert));
      experts.emplace(Platform::Quadruped, load_net(manifest.quadruped_expert));
    } else {
      const Platform p = parse_platform(manifest.expert_override);
      experts.emplace(p, load_net(p == Platform::Human ? manifest.human_expert : manifest.quadruped_expert));
    }
  }

  std::vector<SequenceResult> results;
  for (const auto& input : manifest.inputs) {
    SequenceResult res;
    res.input = input;
    res.output_dir = std::filesystem::path(manifest.output_dir);
    if (manifest.inputs.size() > 1) res.output_dir /= std::filesystem::path(input).stem();
    std::filesystem::create_directories(res.output_dir);

    const Dataset ds = load_dataset(input);
    TrajectorySample init;
    if (!ds.gt.empty()) {
      init = ds.gt[0];
    } else {
      init.R = attitude_from_accel(ds.imu.front().accel);
    }
    if (manifest.oracle_displacement && ds.gt.empty()) {
      throw Error(ErrorCode::MissingArtifact, input + ": oracle displacement needs ground-truth columns");
    }

    std::ofstream routing_file(res.output_dir / "routing.csv");
    RoutingLog routing(&routing_file);
    Predictor predict;
    if (manifest.oracle_displacement) {
      predict = oracle_predictor(ds.gt, ds.imu, manifest.oracle_sigma);
    } else if (use_net && clf) {
      predict = routed_predictor(*clf, experts, &routing);
    } else if (use_net) {
      const DisplacementNet& net = experts.begin()->second;
      const PlatformDecision fixed{experts.begin()->first, 1.0, {0.0, 0.0}};
      predict = [&net, &routing, fixed](const WindowRequest& req) {
        routing.record(req.index, fixed);
        return net.predict(req.window);
      };
    }
    res.run = run_filter(ds.imu, init, cfg, predict, !manifest.no_update);
    save_trajectory((res.output_dir / "trajectory.csv").string(), res.run.est);

    if (!ds.gt.empty()) {
      MetricReport report = evaluate(res.run.est, ds.gt, manifest.rte_window);
      std::ofstream txt(res.output_dir / "report.txt");
      report.write_text(txt);
      std::ofstream csv(res.output_dir / "report.csv");
      report.write_csv(csv);
      const Trajectory aligned = align(res.run.est, ds.gt);
      write_svg((res.output_dir / "plot.svg").string(),
                {{"ground truth", "black", &ds.gt}, {"estimate", "crimson", &aligned}},
                std::filesystem::path(input).filename().string());
      res.report = report;
    }
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace xio

// xio: simulate, train, classify, run, evaluate and plot from one binary.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "xio/xio.hpp"

namespace fs = std::filesystem;
using namespace xio;

namespace {

struct SimulateArgs {
  std::string kind = "circle";
  double duration = 10.0;
  double speed = 1.0;
  double gait_frequency = 2.0;
  double radius = 5.0;
  double rate = 200.0;
  std::uint64_t seed = 0;
  ImuNoiseSpec noise;
  std::vector<double> bg0, ba0;
  std::string out = "sim.csv";
};

int simulate(const SimulateArgs& a) {
  TrajectorySpec spec;
  spec.kind = parse_trajectory_kind(a.kind);
  spec.duration = a.duration;
  spec.speed = a.speed;
  spec.gait_frequency = a.gait_frequency;
  spec.radius = a.radius;
  spec.rate = a.rate;
  spec.seed = fan_out_seed(a.seed, 0);
  const Trajectory traj = synth_trajectory(spec);
  ImuNoiseSpec noise = a.noise;
  noise.seed = fan_out_seed(a.seed, 1);
  if (a.bg0.size() == 3) noise.bg0 = Vec3(a.bg0[0], a.bg0[1], a.bg0[2]);
  if (a.ba0.size() == 3) noise.ba0 = Vec3(a.ba0[0], a.ba0[1], a.ba0[2]);
  const ImuStream imu = corrupt(derive_imu(traj), noise);
  save_dataset(a.out, imu, &traj, a.rate);
  std::cout << "wrote " << a.out << " (" << imu.size() << " samples, " << to_string(spec.kind) << ")\n";
  return 0;
}

std::vector<WindowSample> windows_from(const std::vector<std::string>& paths, int L, int stride) {
  std::vector<WindowSample> out;
  for (const auto& p : paths) {
    const Dataset ds = load_dataset(p);
    if (ds.gt.empty()) throw Error(ErrorCode::MalformedFile, p + ": training data needs ground-truth columns");
    auto w = make_windows(ds.gt, ds.imu, L, stride);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

int train(const std::string& manifest_path) {
  KeyValueFile kv = KeyValueFile::load(manifest_path);
  const std::uint64_t seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  const std::string model = kv.get("model", "expert");
  const std::string checkpoint = kv.require("checkpoint");
  const std::string log_path = kv.get("log", fs::path(checkpoint).replace_extension(".log.csv").string());
  const int stride = static_cast<int>(kv.get_int("window_stride", 20));

  KeyValueFile train_kv = kv;
  train_kv.set("seed", std::to_string(fan_out_seed(seed, 3) >> 1));
  const TrainConfig tc = TrainConfig::from(train_kv);
  std::ofstream log(log_path);
  if (!log) throw Error(ErrorCode::MissingArtifact, "cannot write " + log_path);

  if (model == "expert") {
    KeyValueFile net_kv = kv;
    net_kv.set("seed", std::to_string(fan_out_seed(seed, 2) >> 1));
    DisplacementNet net(NetConfig::from(net_kv));
    const auto data = windows_from(kv.get_list("datasets"), net.config().window_length, stride);
    if (data.empty()) throw Error(ErrorCode::InsufficientData, "manifest lists no datasets");
    Trainer trainer(net, tc, LossConfig::from(kv));
    write_log_header(log);
    const auto rows = trainer.fit(data, &log);
    save_net(checkpoint, net);
    std::cout << "trained expert on " << data.size() << " windows, " << rows.size() << " steps, final loss "
              << (rows.empty() ? 0.0 : rows.back().loss) << ", mean error "
              << mean_displacement_error(net, data) << " m\n";
  } else if (model == "classifier") {
    KeyValueFile clf_kv = kv;
    clf_kv.set("seed", std::to_string(fan_out_seed(seed, 4) >> 1));
    PlatformClassifier clf(ClassifierConfig::from(clf_kv));
    std::vector<LabeledWindow> data;
    for (Platform p : {Platform::Human, Platform::Quadruped}) {
      const auto key = std::string(to_string(p)) + "_datasets";
      for (auto& w : windows_from(kv.get_list(key), clf.config().window_length, stride)) {
        data.push_back(LabeledWindow{std::move(w.window), p});
      }
    }
    if (data.empty()) throw Error(ErrorCode::InsufficientData, "manifest lists no labelled datasets");
    train_classifier(clf, data, tc, &log);
    save_classifier(checkpoint, clf);
    std::cout << "trained classifier on " << data.size() << " windows, training accuracy "
              << classifier_accuracy(clf, data) << "\n";
  } else {
    throw Error(ErrorCode::InvalidConfig, "model must be 'expert' or 'classifier'");
  }
  std::cout << "wrote " << checkpoint << " and " << log_path << "\n";
  return 0;
}

int classify(const std::string& ckpt, const std::string& input, const std::string& out_path) {
  const PlatformClassifier clf = load_classifier(ckpt);
  const Dataset ds = load_dataset(input);
  const int L = clf.config().window_length;
  // attitude from ground truth when present, otherwise strapdown integration
  Trajectory attitude = ds.gt;
  if (attitude.empty()) {
    TrajectorySample init;
    init.R = attitude_from_accel(ds.imu.front().accel);
    attitude = run_filter(ds.imu, init, FilterConfig{}, {}, false).est;
  }
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw Error(ErrorCode::MissingArtifact, "cannot write " + out_path);
  }
  RoutingLog log(out_path.empty() ? &std::cout : &file);
  std::map<Platform, long> counts;
  long index = 0;
  for (std::size_t k = 0; k + L <= ds.imu.size(); k += static_cast<std::size_t>(L)) {
    const ImuWindow w = rotate_window(ImuWindow(ds.imu.begin() + static_cast<long>(k),
                                                ds.imu.begin() + static_cast<long>(k + L)),
                                      attitude.at(ds.imu[k].t, true).R);
    const PlatformDecision d = clf.classify(w);
    log.record(index++, d);
    ++counts[d.label];
  }
  std::cerr << "windows: " << index << ", human " << counts[Platform::Human] << ", quadruped "
            << counts[Platform::Quadruped] << "\n";
  return 0;
}

int run(RunManifest m) {
  const auto results = run_pipeline(m);
  for (const auto& r : results) {
    std::cout << r.input << " -> " << r.output_dir.string() << " (" << r.run.updates << " updates)\n";
    if (r.report) r.report->write_text(std::cout);
  }
  return 0;
}

int evaluate_cmd(const std::string& est_path, const std::string& gt_path, double window, const std::string& out) {
  const MetricReport r = evaluate(load_trajectory(est_path), load_trajectory(gt_path), window);
  r.write_text(std::cout);
  if (!out.empty()) {
    std::ofstream csv(out);
    if (!csv) throw Error(ErrorCode::MissingArtifact, "cannot write " + out);
    r.write_csv(csv);
  }
  return 0;
}

int plot(const std::string& est_path, const std::string& gt_path, const std::string& out) {
  const Trajectory gt = load_trajectory(gt_path);
  const Trajectory est = align(load_trajectory(est_path), gt);
  write_svg(out, {{"ground truth", "black", &gt}, {"estimate", "crimson", &est}}, fs::path(est_path).filename());
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xio inertial odometry toolkit"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "synthesize a trajectory and its IMU stream");
  s->add_option("--kind", sim.kind, "circle | figure-eight | human-gait | quadruped-gait");
  s->add_option("--duration", sim.duration, "seconds");
  s->add_option("--speed", sim.speed, "m/s");
  s->add_option("--gait-frequency", sim.gait_frequency, "Hz");
  s->add_option("--radius", sim.radius, "m");
  s->add_option("--rate", sim.rate, "Hz");
  s->add_option("--seed", sim.seed);
  s->add_option("--sigma-g", sim.noise.sigma_g, "gyro white noise density");
  s->add_option("--sigma-a", sim.noise.sigma_a, "accel white noise density");
  s->add_option("--sigma-bg", sim.noise.sigma_bg, "gyro bias random walk density");
  s->add_option("--sigma-ba", sim.noise.sigma_ba, "accel bias random walk density");
  s->add_option("--bg0", sim.bg0, "initial gyro bias")->expected(3);
  s->add_option("--ba0", sim.ba0, "initial accel bias")->expected(3);
  s->add_option("--out,-o", sim.out, "output dataset");

  std::string manifest;
  auto* t = app.add_subcommand("train", "train an expert or the platform classifier");
  t->add_option("--manifest", manifest)->required();

  std::string clf_path, clf_input, clf_out;
  auto* c = app.add_subcommand("classify", "per-window platform decisions");
  c->add_option("--classifier", clf_path)->required();
  c->add_option("--input", clf_input)->required();
  c->add_option("--out,-o", clf_out, "routing CSV (stdout when omitted)");

  RunManifest rm;
  std::string run_manifest;
  auto* r = app.add_subcommand("run", "filter + network pipeline with evaluation");
  r->add_option("--manifest", run_manifest, "key = value run manifest; flags override it");
  r->add_option("--input", rm.inputs, "dataset(s)");
  r->add_option("--out,-o", rm.output_dir);
  r->add_option("--filter-config", rm.filter_config);
  r->add_option("--classifier", rm.classifier);
  r->add_option("--human-expert", rm.human_expert);
  r->add_option("--quadruped-expert", rm.quadruped_expert);
  r->add_option("--expert", rm.expert_override, "human | quadruped, skips routing");
  r->add_flag("--oracle-displacement", rm.oracle_displacement, "use ground-truth displacements");
  r->add_option("--oracle-sigma", rm.oracle_sigma);
  r->add_flag("--no-update", rm.no_update, "strapdown integration only");
  r->add_option("--rte-window", rm.rte_window, "seconds");
  r->add_option("--seed", rm.seed);

  std::string est, gt, out;
  double window = 60.0;
  auto* e = app.add_subcommand("evaluate", "ATE / RTE of an estimate against ground truth");
  e->add_option("--est", est)->required();
  e->add_option("--gt", gt)->required();
  e->add_option("--rte-window", window);
  e->add_option("--out,-o", out, "report CSV");

  std::string plot_out = "plot.svg";
  auto* p = app.add_subcommand("plot", "top-down SVG of estimate vs ground truth");
  p->add_option("--est", est)->required();
  p->add_option("--gt", gt)->required();
  p->add_option("--out,-o", plot_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*s) return simulate(sim);
    if (*t) return train(manifest);
    if (*c) return classify(clf_path, clf_input, clf_out);
    if (*r) {
      if (!run_manifest.empty()) {
        RunManifest base = RunManifest::from(KeyValueFile::load(run_manifest));
        // explicit flags win over the manifest
        if (rm.inputs.empty()) rm.inputs = base.inputs;
        if (r->count("--out") == 0) rm.output_dir = base.output_dir;
        if (rm.filter_config.empty()) rm.filter_config = base.filter_config;
        if (rm.classifier.empty()) rm.classifier = base.classifier;
        if (rm.human_expert.empty()) rm.human_expert = base.human_expert;
        if (rm.quadruped_expert.empty()) rm.quadruped_expert = base.quadruped_expert;
        if (rm.expert_override.empty()) rm.expert_override = base.expert_override;
        rm.oracle_displacement = rm.oracle_displacement || base.oracle_displacement;
        if (r->count("--oracle-sigma") == 0) rm.oracle_sigma = base.oracle_sigma;
        rm.no_update = rm.no_update || base.no_update;
        if (r->count("--rte-window") == 0) rm.rte_window = base.rte_window;
        if (r->count("--seed") == 0) rm.seed = base.seed;
      }
      return run(rm);
    }
    if (*e) return evaluate_cmd(est, gt, window, out);
    if (*p) return plot(est, gt, plot_out);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_status(err.code());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 0;
}

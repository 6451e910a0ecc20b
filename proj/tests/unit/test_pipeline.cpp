#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "xio/pipeline.hpp"

using namespace xio;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "xio_pipeline_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct CliResult {
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult cli(const std::string& args) {
  const fs::path out = workdir() / "stdout.txt", err = workdir() / "stderr.txt";
  const std::string cmd = std::string(XIO_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

Trajectory circle(double duration) {
  TrajectorySpec spec;
  spec.kind = TrajectoryKind::Circle;
  spec.duration = duration;
  return synth_trajectory(spec);
}

}  // namespace

TEST(RunFilter, OracleDisplacementOnANoiseFreeCircle) {
  const Trajectory gt = circle(10.0);
  const ImuStream imu = derive_imu(gt);
  const FilterRun run = run_filter(imu, gt[0], FilterConfig{}, oracle_predictor(gt, imu, 1e-3));
  EXPECT_EQ(run.updates, (static_cast<long>(imu.size()) - 200) / 20 + 1);
  EXPECT_LT(evaluate(run.est, gt, 60.0).ate, 1e-3);
}

TEST(RunFilter, UpdatesBeatDeadReckoningOnNoisyData) {
  const Trajectory gt = circle(20.0);
  ImuNoiseSpec noise;
  noise.sigma_g = 1e-3;
  noise.sigma_a = 1e-2;
  noise.bg0 = Vec3(2e-3, -1e-3, 1e-3);
  noise.ba0 = Vec3(0.02, -0.03, 0.01);
  noise.seed = 1;
  const ImuStream imu = corrupt(derive_imu(gt), noise);
  const double updated = evaluate(run_filter(imu, gt[0], FilterConfig{}, oracle_predictor(gt, imu, 1e-2)).est, gt).ate;
  const double dead = evaluate(run_filter(imu, gt[0], FilterConfig{}, Predictor{}, false).est, gt).ate;
  EXPECT_LT(updated, dead);
  EXPECT_LT(updated, 0.2);
}

TEST(RunFilter, RecordsOnePosePerSampleAndRotatesWindows) {
  const Trajectory gt = circle(3.0);
  const ImuStream imu = derive_imu(gt);
  std::vector<WindowRequest> seen;
  const Predictor spy = [&](const WindowRequest& req) {
    seen.push_back(req);
    return oracle_predictor(gt, imu, 1e-3)(req);
  };
  const FilterRun run = run_filter(imu, gt[0], FilterConfig{}, spy);
  ASSERT_EQ(run.est.size(), imu.size());
  ASSERT_FALSE(seen.empty());
  EXPECT_EQ(seen[0].first, 0u);
  EXPECT_EQ(seen[0].last, 199u);
  EXPECT_EQ(seen[1].first, 20u);
  // a level circle has no tilt, so rotated windows equal the raw samples
  for (std::size_t k = 0; k < 200; ++k) {
    EXPECT_LT((seen[3].window[k].accel - imu[seen[3].first + k].accel).norm(), 1e-6);
  }
}

TEST(AttitudeFromAccel, LevelsTheGravityReading) {
  const Rotation tilt = exp_so3(Vec3(0.2, -0.3, 0.0));
  const Vec3 reading = tilt.inverse() * Vec3(0, 0, kGravity);
  const Rotation est = attitude_from_accel(reading);
  EXPECT_LT((est * reading - Vec3(0, 0, kGravity)).norm(), 1e-12);
  EXPECT_NEAR(yaw_of(est), 0.0, 1e-12);
}

TEST(FanOutSeed, DistinctPerModule) {
  EXPECT_NE(fan_out_seed(1, 0), fan_out_seed(1, 1));
  EXPECT_NE(fan_out_seed(1, 0), fan_out_seed(2, 0));
  EXPECT_EQ(fan_out_seed(9, 3), fan_out_seed(9, 3));
}

TEST(RunPipeline, WritesArtifactsForOracleRun) {
  const Trajectory gt = circle(10.0);
  const fs::path data = workdir() / "circle_api.csv";
  save_dataset(data.string(), derive_imu(gt), &gt, 200.0);
  RunManifest m;
  m.inputs = {data.string()};
  m.output_dir = (workdir() / "api_out").string();
  m.oracle_displacement = true;
  const auto results = run_pipeline(m);
  ASSERT_EQ(results.size(), 1u);
  ASSERT_TRUE(results[0].report.has_value());
  EXPECT_LT(results[0].report->ate, 1e-3);
  for (const char* f : {"trajectory.csv", "routing.csv", "report.txt", "report.csv", "plot.svg"}) {
    EXPECT_TRUE(fs::exists(fs::path(m.output_dir) / f)) << f;
  }
  EXPECT_EQ(load_trajectory((fs::path(m.output_dir) / "trajectory.csv").string()).size(), gt.size());
}

TEST(RunPipeline, MissingArtifactsNameThePath) {
  const Trajectory gt = circle(2.0);
  const fs::path data = workdir() / "short.csv";
  save_dataset(data.string(), derive_imu(gt), &gt, 200.0);
  RunManifest m;
  m.inputs = {data.string()};
  m.expert_override = "human";
  m.human_expert = (workdir() / "nope.ckpt").string();
  try {
    run_pipeline(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingArtifact);
    EXPECT_NE(std::string(e.what()).find("nope.ckpt"), std::string::npos);
  }
  m.human_expert.clear();
  m.expert_override.clear();
  EXPECT_THROW(run_pipeline(m), Error);
}

TEST(Cli, SimulateWritesAReproducibleDataset) {
  const fs::path a = workdir() / "sim_a.csv", b = workdir() / "sim_b.csv";
  const std::string args = " --kind human-gait --duration 2 --seed 7 --sigma-g 0.001 --sigma-a 0.01 --out ";
  ASSERT_EQ(cli("simulate" + args + a.string()).status, 0);
  ASSERT_EQ(cli("simulate" + args + b.string()).status, 0);
  const std::string text = slurp(a);
  EXPECT_EQ(text.rfind("# xio-v1 rate=200\nt,wx,wy,wz,ax,ay,az,qw,qx,qy,qz,px,py,pz\n", 0), 0u);
  EXPECT_EQ(text, slurp(b));
  EXPECT_EQ(load_dataset(a.string()).imu.size(), 400u);
}

TEST(Cli, EvaluateIdenticalTrajectoriesGivesZero) {
  const fs::path data = workdir() / "eval.csv";
  ASSERT_EQ(cli("simulate --kind figure-eight --duration 5 --out " + data.string()).status, 0);
  const fs::path report = workdir() / "eval_report.csv";
  const CliResult r = cli("evaluate --est " + data.string() + " --gt " + data.string() + " --out " + report.string());
  ASSERT_EQ(r.status, 0) << r.err;
  std::istringstream csv(slurp(report));
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(row.substr(0, 4), "0,0,");
}

TEST(Cli, RunWithOracleAndPlot) {
  const fs::path data = workdir() / "cli_circle.csv";
  ASSERT_EQ(cli("simulate --kind circle --duration 10 --out " + data.string()).status, 0);
  const fs::path out = workdir() / "cli_run";
  const CliResult r = cli("run --input " + data.string() + " --oracle-displacement --out " + out.string());
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("ATE"), std::string::npos);
  const fs::path svg = workdir() / "cli_plot.svg";
  const CliResult p = cli("plot --est " + (out / "trajectory.csv").string() + " --gt " + data.string() + " --out " +
                          svg.string());
  ASSERT_EQ(p.status, 0) << p.err;
  EXPECT_EQ(slurp(svg).rfind("<svg", 0), 0u);
}

TEST(Cli, ErrorsMapToExitStatus) {
  const fs::path data = workdir() / "exit.csv";
  ASSERT_EQ(cli("simulate --kind circle --duration 2 --out " + data.string()).status, 0);
  const std::string missing = (workdir() / "missing_expert.ckpt").string();
  const CliResult r = cli("run --input " + data.string() + " --expert human --human-expert " + missing);
  EXPECT_EQ(r.status, 4);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;

  EXPECT_EQ(cli("classify --classifier " + missing + " --input " + data.string()).status, 4);
  EXPECT_EQ(cli("simulate --kind spiral --out " + (workdir() / "x.csv").string()).status, 2);
  EXPECT_EQ(cli("frobnicate").status, 2);

  const fs::path bad = workdir() / "bad.csv";
  std::ofstream(bad) << "# xio-v1 rate=200\nt,wx,wy,wz,ax,ay,az\n0,0,0,0,0,0,9.8\n0,0,0,0,0,0,9.8\n";
  const CliResult m = cli("run --input " + bad.string() + " --no-update --out " + (workdir() / "bad_out").string());
  EXPECT_EQ(m.status, 2);
  EXPECT_NE(m.err.find("bad.csv:4"), std::string::npos) << m.err;
}

TEST(Cli, TrainAndClassifyTinyModels) {
  const fs::path human = workdir() / "train_human.csv", quad = workdir() / "train_quad.csv";
  ASSERT_EQ(cli("simulate --kind human-gait --duration 3 --seed 1 --out " + human.string()).status, 0);
  ASSERT_EQ(cli("simulate --kind quadruped-gait --duration 3 --seed 2 --out " + quad.string()).status, 0);

  const fs::path expert = workdir() / "expert.ckpt";
  std::ofstream(workdir() / "expert.manifest") << "model = expert\ncheckpoint = " << expert.string()
                                               << "\ndatasets = " << human.string()
                                               << "\nd_model = 8\nheads = 2\nlayers = 2\nbatch_size = 8\n"
                                                  "max_steps = 3\nwindow_stride = 50\nseed = 3\n";
  const CliResult t = cli("train --manifest " + (workdir() / "expert.manifest").string());
  ASSERT_EQ(t.status, 0) << t.err;
  EXPECT_TRUE(fs::exists(expert));
  EXPECT_EQ(slurp(workdir() / "expert.log.csv").substr(0, 29), "step,loss,huber,nll,grad_norm");

  const fs::path clf = workdir() / "clf.ckpt";
  std::ofstream(workdir() / "clf.manifest") << "model = classifier\ncheckpoint = " << clf.string()
                                            << "\nhuman_datasets = " << human.string()
                                            << "\nquadruped_datasets = " << quad.string()
                                            << "\nchannels = 4,4,4\nbatch_size = 8\nmax_steps = 3\n"
                                               "window_stride = 50\n";
  const CliResult c = cli("train --manifest " + (workdir() / "clf.manifest").string());
  ASSERT_EQ(c.status, 0) << c.err;

  const fs::path routing = workdir() / "routing.csv";
  const CliResult k = cli("classify --classifier " + clf.string() + " --input " + human.string() + " --out " +
                          routing.string());
  ASSERT_EQ(k.status, 0) << k.err;
  std::istringstream rows(slurp(routing));
  std::string line;
  std::getline(rows, line);
  EXPECT_EQ(line, "window,label,confidence");
  int n = 0;
  while (std::getline(rows, line)) ++n;
  EXPECT_EQ(n, 3);

  const fs::path out = workdir() / "routed";
  const CliResult r = cli("run --input " + quad.string() + " --classifier " + clf.string() + " --human-expert " +
                          expert.string() + " --quadruped-expert " + expert.string() + " --out " + out.string());
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "routing.csv"));
}

#pragma once

// Huber-Gaussian loss, training windows, Adam and finite-difference gradient
// verification for the displacement network.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "xio/autodiff.hpp"
#include "xio/checkpoint.hpp"
#include "xio/config.hpp"
#include "xio/displacement_net.hpp"
#include "xio/error.hpp"
#include "xio/geometry.hpp"
#include "xio/imu.hpp"
#include "xio/simkit.hpp"
#include "xio/state_estimator.hpp"

namespace xio {

struct LossConfig {
  double delta = 0.005;   // m
  double lambda = 1e-4;

  void validate() const {
    if (!(delta > 0.0) || !(lambda >= 0.0)) throw Error(ErrorCode::InvalidConfig, "loss needs delta > 0, lambda >= 0");
  }

  void write(KeyValueFile& kv) const {
    kv.set("huber_delta", std::to_string(delta));
    kv.set("nll_weight", std::to_string(lambda));
  }

  static LossConfig from(const KeyValueFile& kv) {
    LossConfig c;
    c.delta = kv.get_double("huber_delta", c.delta);
    c.lambda = kv.get_double("nll_weight", c.lambda);
    c.validate();
    return c;
  }
};

struct TrainConfig {
  int batch_size = 128;
  double learning_rate = 1e-4;
  int max_epochs = 100;
  long max_steps = 0;  // 0: bounded by epochs only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1 || !(learning_rate > 0.0) || max_epochs < 1 || max_steps < 0) {
      throw Error(ErrorCode::InvalidConfig, "training needs batch_size >= 1, learning_rate > 0, max_epochs >= 1");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
      throw Error(ErrorCode::InvalidConfig, "adam betas must lie in [0, 1) and eps > 0");
    }
  }

  static TrainConfig from(const KeyValueFile& kv) {
    TrainConfig c;
    c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
    c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
    c.max_epochs = static_cast<int>(kv.get_int("max_epochs", c.max_epochs));
    c.max_steps = kv.get_int("max_steps", c.max_steps);
    c.beta1 = kv.get_double("adam_beta1", c.beta1);
    c.beta2 = kv.get_double("adam_beta2", c.beta2);
    c.eps = kv.get_double("adam_eps", c.eps);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(c.seed)));
    c.validate();
    return c;
  }
};

/// Gravity-aligned window and its displacement label in the same frame.
struct WindowSample {
  ImuWindow window;
  Vec3 d = Vec3::Zero();
};

// ---------------------------------------------------------------------------
// Scalar loss terms

/// Per-axis Huber summed over axes.
inline double huber(const Vec3& e, double delta) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double a = std::abs(e(i));
    s += a <= delta ? 0.5 * a * a : delta * a - 0.5 * delta * delta;
  }
  return s;
}

/// 0.5 e^T Sigma^-1 e + 0.5 ln det Sigma.
inline double gaussian_nll(const Vec3& e, const Mat3& sigma) {
  const Eigen::LLT<Mat3> llt(0.5 * (sigma + sigma.transpose()));
  if (llt.info() != Eigen::Success || !sigma.allFinite()) {
    throw Error(ErrorCode::NonPDCovariance, "predicted covariance is not positive definite");
  }
  const Mat3 L = llt.matrixL();
  const double log_det = 2.0 * L.diagonal().array().log().sum();
  return 0.5 * e.dot(llt.solve(e)) + 0.5 * log_det;
}

inline double total_loss(const Vec3& d_hat, const Mat3& sigma, const Vec3& d, const LossConfig& cfg) {
  cfg.validate();
  const Vec3 e = d_hat - d;
  return huber(e, cfg.delta) + cfg.lambda * gaussian_nll(e, sigma);
}

// ---------------------------------------------------------------------------
// Windowing

/// Windows of `L` consecutive samples starting every `stride` samples. The
/// window is expressed in the tilt frame of its first sample and labelled
/// with the displacement between its first and last sample timestamps,
/// rotated into the heading frame of the first sample.
inline std::vector<WindowSample> make_windows(const Trajectory& traj, const ImuStream& imu, int L, int stride) {
  if (L < 1 || stride < 1) throw Error(ErrorCode::InvalidConfig, "window length and stride must be >= 1");
  if (static_cast<int>(imu.size()) < L) {
    throw Error(ErrorCode::InsufficientData,
                "stream of " + std::to_string(imu.size()) + " samples is shorter than one window");
  }
  if (traj.size() < 2 || imu.front().t < traj.start_time() - 1e-9 || imu.back().t > traj.end_time() + 1e-9) {
    throw Error(ErrorCode::InsufficientData, "trajectory does not cover the IMU time range");
  }
  std::vector<WindowSample> out;
  for (std::size_t k = 0; k + L <= imu.size(); k += static_cast<std::size_t>(stride)) {
    const TrajectorySample a = traj.at(imu[k].t);
    const TrajectorySample b = traj.at(imu[k + L - 1].t);
    WindowSample w;
    w.window = rotate_window(ImuWindow(imu.begin() + static_cast<long>(k), imu.begin() + static_cast<long>(k + L)),
                             a.R);
    w.d = yaw_part(a.R).inverse() * (b.p - a.p);
    out.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  std::vector<nn::Mat> m;
  std::vector<nn::Mat> v;
};

inline AdamState make_adam_state(const nn::ParamStore& params) {
  AdamState s;
  for (const auto& p : params.all()) {
    s.m.push_back(nn::Mat::Zero(p.value.rows(), p.value.cols()));
    s.v.push_back(nn::Mat::Zero(p.value.rows(), p.value.cols()));
  }
  return s;
}

/// One bias-corrected Adam update from the gradients stored in `params`.
inline void adam_step(nn::ParamStore& params, AdamState& state, const TrainConfig& cfg, long step_index) {
  if (step_index < 1) throw Error(ErrorCode::InvalidConfig, "adam step index starts at 1");
  if (static_cast<int>(state.m.size()) != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match the parameter set");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
  for (int i = 0; i < params.size(); ++i) {
    nn::Parameter& p = params[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * p.grad;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= cfg.learning_rate * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + cfg.eps);
  }
}

// ---------------------------------------------------------------------------
// Batched loss on the autodiff graph

struct LossTerms {
  nn::Var total;
  double huber = 0.0;  // batch mean
  double nll = 0.0;    // batch mean
};

/// Batch-mean of huber(e) + lambda * gaussian_nll(e, diag(exp(2s))).
inline LossTerms batch_loss(nn::Tape& t, const HeadOutput& head, std::span<const Vec3> labels,
                            const LossConfig& cfg) {
  const int B = head.batch;
  if (static_cast<int>(labels.size()) != B) throw Error(ErrorCode::ShapeMismatch, "one label per window");
  nn::Mat target(B, 3);
  for (int b = 0; b < B; ++b) target.row(b) = labels[b].transpose();
  nn::Var d_hat = nn::slice_cols(t, head.out, 0, 3);
  nn::Var s = nn::slice_cols(t, head.out, 3, 3);
  nn::Var e = nn::sub(t, d_hat, t.constant(std::move(target)));
  nn::Var hub = nn::huber_sum(t, e, cfg.delta);
  nn::Var quad = nn::sum(t, nn::mul(t, nn::mul(t, e, e), nn::exp(t, nn::scale(t, s, -2.0))));
  nn::Var nll = nn::add(t, nn::scale(t, quad, 0.5), nn::sum(t, s));
  const double inv_b = 1.0 / B;
  LossTerms out;
  out.total = nn::add(t, nn::scale(t, hub, inv_b), nn::scale(t, nll, cfg.lambda * inv_b));
  out.huber = t.value(hub)(0, 0) * inv_b;
  out.nll = t.value(nll)(0, 0) * inv_b;
  return out;
}

namespace detail {

inline std::vector<ImuWindow> windows_of(std::span<const WindowSample> batch) {
  std::vector<ImuWindow> w;
  w.reserve(batch.size());
  for (const auto& s : batch) w.push_back(s.window);
  return w;
}

inline std::vector<Vec3> labels_of(std::span<const WindowSample> batch) {
  std::vector<Vec3> d;
  d.reserve(batch.size());
  for (const auto& s : batch) d.push_back(s.d);
  return d;
}

}  // namespace detail

/// Loss of `net` on `batch` without recording gradients.
inline double loss_value(const DisplacementNet& net, std::span<const WindowSample> batch, const LossConfig& cfg) {
  nn::Tape t(false);
  const auto windows = detail::windows_of(batch);
  const auto labels = detail::labels_of(batch);
  const HeadOutput h = net.forward(t, windows);
  return t.value(batch_loss(t, h, labels, cfg).total)(0, 0);
}

/// Forward + backward; leaves the gradients in net.params().
inline LossTerms accumulate_gradients(DisplacementNet& net, std::span<const WindowSample> batch,
                                      const LossConfig& cfg, double* loss = nullptr) {
  net.params().zero_grad();
  nn::Tape t;
  const auto windows = detail::windows_of(batch);
  const auto labels = detail::labels_of(batch);
  const HeadOutput h = net.forward(t, windows);
  LossTerms terms = batch_loss(t, h, labels, cfg);
  t.backward(terms.total);
  t.collect_param_grads(net.params());
  if (loss) *loss = t.value(terms.total)(0, 0);
  return terms;
}

/// Mean Euclidean displacement error over `data`, evaluated in chunks.
inline double mean_displacement_error(const DisplacementNet& net, std::span<const WindowSample> data,
                                      std::size_t chunk = 64) {
  if (data.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); i += chunk) {
    const auto part = data.subspan(i, std::min(chunk, data.size() - i));
    const auto pred = net.predict_batch(detail::windows_of(part));
    for (std::size_t k = 0; k < part.size(); ++k) sum += (pred[k].d - part[k].d).norm();
  }
  return sum / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainLogRow {
  long step = 0;
  double loss = 0.0;
  double huber = 0.0;
  double nll = 0.0;
  double grad_norm = 0.0;
};

inline void write_log_header(std::ostream& out) { out << "step,loss,huber,nll,grad_norm\n"; }

inline void write_log_row(std::ostream& out, const TrainLogRow& r) {
  out << r.step << "," << r.loss << "," << r.huber << "," << r.nll << "," << r.grad_norm << "\n";
}

class Trainer {
 public:
  Trainer(DisplacementNet& net, const TrainConfig& train, const LossConfig& loss)
      : net_(net), train_(train), loss_(loss), adam_(make_adam_state(net.params())), rng_(train.seed) {
    train_.validate();
    loss_.validate();
  }

  long steps_taken() const { return step_; }

  /// One optimizer step on `batch`.
  TrainLogRow step(std::span<const WindowSample> batch) {
    double loss = 0.0;
    const LossTerms terms = accumulate_gradients(net_, batch, loss_, &loss);
    if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteInput, "training loss became non-finite");
    double g2 = 0.0;
    for (const auto& p : net_.params().all()) g2 += p.grad.squaredNorm();
    adam_step(net_.params(), adam_, train_, ++step_);
    return TrainLogRow{step_, loss, terms.huber, terms.nll, std::sqrt(g2)};
  }

  /// Shuffled mini-batch epochs until max_epochs or max_steps. Each row is
  /// also streamed to `log` when given.
  std::vector<TrainLogRow> fit(const std::vector<WindowSample>& data, std::ostream* log = nullptr) {
    if (data.empty()) throw Error(ErrorCode::InsufficientData, "no training windows");
    std::vector<TrainLogRow> rows;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const auto bs = static_cast<std::size_t>(train_.batch_size);
    std::vector<WindowSample> batch;
    for (int epoch = 0; epoch < train_.max_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng_);
      for (std::size_t i = 0; i < order.size(); i += bs) {
        if (train_.max_steps > 0 && step_ >= train_.max_steps) return rows;
        batch.clear();
        for (std::size_t k = i; k < std::min(order.size(), i + bs); ++k) batch.push_back(data[order[k]]);
        rows.push_back(step(batch));
        if (log) write_log_row(*log, rows.back());
      }
    }
    return rows;
  }

 private:
  DisplacementNet& net_;
  TrainConfig train_;
  LossConfig loss_;
  AdamState adam_;
  std::mt19937_64 rng_;
  long step_ = 0;
};

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;

  bool passed() const { return max_rel_err < tolerance; }

  std::vector<std::string> failing() const {
    std::vector<std::string> names;
    for (const auto& e : entries)
      if (!e.passed) names.push_back(e.name);
    return names;
  }
};

/// Compares analytic gradients of the total loss with central differences,
/// parameter by parameter. `tamper` may rewrite the analytic gradients
/// before comparison, which lets tests inject a known fault.
inline GradCheckReport grad_check(DisplacementNet& net, std::span<const WindowSample> batch, const LossConfig& cfg,
                                  double eps = 1e-5, double tolerance = 1e-4,
                                  const std::function<void(nn::ParamStore&)>& tamper = {}) {
  accumulate_gradients(net, batch, cfg);
  if (tamper) tamper(net.params());
  constexpr double kFloor = 1e-6;
  GradCheckReport report;
  report.tolerance = tolerance;
  for (auto& p : net.params().all()) {
    GradCheckEntry entry{p.name, 0.0, true};
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& x = p.value.data()[i];
      const double x0 = x;
      x = x0 + eps;
      const double up = loss_value(net, batch, cfg);
      x = x0 - eps;
      const double down = loss_value(net, batch, cfg);
      x = x0;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p.grad.data()[i];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFloor});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    entry.passed = entry.max_rel_err < tolerance;
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(entry);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Network checkpoints

inline constexpr const char* kNetCheckpointKind = "displacement-net";

inline void save_net(const std::string& path, const DisplacementNet& net) {
  KeyValueFile kv;
  net.config().write(kv);
  save_checkpoint(path, kNetCheckpointKind, kv, net.params());
}

inline DisplacementNet load_net(const std::string& path) {
  const CheckpointHeader h = read_checkpoint_header(path);
  DisplacementNet net(NetConfig::from(h.config));
  load_checkpoint(path, kNetCheckpointKind, net.params());
  return net;
}

}  // namespace xio

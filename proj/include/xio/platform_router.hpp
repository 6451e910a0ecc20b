#pragma once

// 1-D convolutional platform classifier and the rule that hands each window
// to the expert network trained for that platform.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "xio/autodiff.hpp"
#include "xio/checkpoint.hpp"
#include "xio/config.hpp"
#include "xio/error.hpp"
#include "xio/imu.hpp"
#include "xio/training.hpp"

namespace xio {

enum class Platform { Quadruped = 0, Human = 1 };

inline const char* to_string(Platform p) { return p == Platform::Human ? "human" : "quadruped"; }

inline Platform parse_platform(const std::string& s) {
  if (s == "human") return Platform::Human;
  if (s == "quadruped") return Platform::Quadruped;
  throw Error(ErrorCode::InvalidConfig, "unknown platform '" + s + "'");
}

struct PlatformDecision {
  Platform label = Platform::Quadruped;
  double confidence = 0.5;
  std::array<double, 2> probabilities{0.5, 0.5};
};

/// Softmax over two logits; ties go to the lower index (quadruped).
inline PlatformDecision decide(double logit_quadruped, double logit_human) {
  const double m = std::max(logit_quadruped, logit_human);
  const double e0 = std::exp(logit_quadruped - m);
  const double e1 = std::exp(logit_human - m);
  PlatformDecision d;
  d.probabilities = {e0 / (e0 + e1), e1 / (e0 + e1)};
  d.label = d.probabilities[1] > d.probabilities[0] ? Platform::Human : Platform::Quadruped;
  d.confidence = d.probabilities[static_cast<int>(d.label)];
  return d;
}

struct ClassifierConfig {
  std::array<int, 3> channels{32, 64, 128};
  std::array<int, 3> kernels{5, 5, 5};
  std::array<int, 3> pools{2, 2, 2};
  int pool_bins = 4;
  int n_classes = 2;
  int window_length = 200;
  int input_dims = 6;
  double bn_momentum = 0.1;
  std::uint64_t seed = 2;

  /// Sequence length entering the adaptive pool.
  int final_length() const {
    int T = window_length;
    for (int k = 0; k < 3; ++k) T = (T - kernels[k] + 1) / pools[k];
    return T;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, "ClassifierConfig: " + m); };
    if (n_classes != 2) fail("exactly two classes are supported");
    for (int k = 0; k < 3; ++k) {
      if (channels[k] < 1 || kernels[k] < 1 || pools[k] < 1) fail("channels, kernels and pools must be >= 1");
    }
    if (pool_bins < 1 || input_dims < 1) fail("pool_bins and input_dims must be >= 1");
    if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) fail("bn_momentum must lie in (0, 1]");
    if (final_length() < 1) fail("window too short for the convolution stack");
  }

  void write(KeyValueFile& kv) const {
    auto triple = [](const std::array<int, 3>& a) {
      return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]);
    };
    kv.set("channels", triple(channels));
    kv.set("kernels", triple(kernels));
    kv.set("pools", triple(pools));
    kv.set("pool_bins", std::to_string(pool_bins));
    kv.set("n_classes", std::to_string(n_classes));
    kv.set("window_length", std::to_string(window_length));
    kv.set("input_dims", std::to_string(input_dims));
    kv.set("bn_momentum", std::to_string(bn_momentum));
    kv.set("seed", std::to_string(seed));
  }

  static ClassifierConfig from(const KeyValueFile& kv) {
    ClassifierConfig c;
    auto triple = [&](const std::string& key, std::array<int, 3>& out) {
      if (!kv.has(key)) return;
      const auto v = kv.get_doubles(key);
      if (v.size() != 3) throw Error(ErrorCode::InvalidConfig, "'" + key + "' needs three values");
      for (int k = 0; k < 3; ++k) out[k] = static_cast<int>(v[k]);
    };
    triple("channels", c.channels);
    triple("kernels", c.kernels);
    triple("pools", c.pools);
    c.pool_bins = static_cast<int>(kv.get_int("pool_bins", c.pool_bins));
    c.n_classes = static_cast<int>(kv.get_int("n_classes", c.n_classes));
    c.window_length = static_cast<int>(kv.get_int("window_length", c.window_length));
    c.input_dims = static_cast<int>(kv.get_int("input_dims", c.input_dims));
    c.bn_momentum = kv.get_double("bn_momentum", c.bn_momentum);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(c.seed)));
    c.validate();
    return c;
  }
};

/// Parameters of one MaxPool(relu(BN(Conv1d(x)))) stage. `w` is
/// C_out x (kernel * C_in) with input channels fastest.
struct ConvLayer {
  nn::Mat w;
  nn::RowVec b;
  nn::RowVec gamma;
  nn::RowVec beta;
  nn::RowVec running_mean;
  nn::RowVec running_var;
  int kernel = 1;
  int pool = 1;
};

/// Inference-mode conv block over one time-major (T x C_in) sequence.
inline nn::Mat conv_block(const nn::Mat& x, const ConvLayer& layer) {
  nn::Tape t(false);
  nn::Var cols = nn::im2col(t, t.constant(x), 1, layer.kernel);
  nn::Var y = nn::linear(t, cols, t.constant(layer.w), t.constant(layer.b));
  y = nn::batch_norm_eval(t, y, t.constant(layer.gamma), t.constant(layer.beta), layer.running_mean,
                          layer.running_var);
  y = nn::max_pool_time(t, nn::relu(t, y), 1, layer.pool);
  return t.value(y);
}

class PlatformClassifier {
 public:
  explicit PlatformClassifier(const ClassifierConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    build();
  }

  const ClassifierConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  ConvLayer layer(int k) const {
    const std::string pre = "conv" + std::to_string(k + 1);
    return ConvLayer{params_.at(pre + ".w").value,
                     params_.at(pre + ".b").value,
                     params_.at(pre + ".bn.g").value,
                     params_.at(pre + ".bn.b").value,
                     params_.at(pre + ".bn.running_mean").value,
                     params_.at(pre + ".bn.running_var").value,
                     cfg_.kernels[k],
                     cfg_.pools[k]};
  }

  /// Batch logits (B x 2). In training mode batch statistics are used and
  /// reported through `stats`; otherwise the running statistics.
  nn::Var logits(nn::Tape& t, std::span<const ImuWindow> windows, bool training,
                 std::vector<nn::BatchStats>* stats = nullptr) const {
    const int B = static_cast<int>(windows.size());
    const int T = cfg_.window_length;
    nn::Mat x(static_cast<Eigen::Index>(B) * T, cfg_.input_dims);
    for (int b = 0; b < B; ++b) {
      if (static_cast<int>(windows[b].size()) != T) {
        throw Error(ErrorCode::ShapeMismatch, "classifier expects windows of " + std::to_string(T) + " samples");
      }
      for (int s = 0; s < T; ++s) {
        const ImuSample& smp = windows[b][s];
        x.row(b * T + s) << smp.gyro.transpose(), smp.accel.transpose();
      }
    }
    nn::Var h = t.constant(std::move(x));
    if (stats) stats->assign(3, nn::BatchStats{});
    for (int k = 0; k < 3; ++k) {
      const std::string pre = "conv" + std::to_string(k + 1);
      nn::Var y = nn::linear(t, nn::im2col(t, h, B, cfg_.kernels[k]), p(t, pre + ".w"), p(t, pre + ".b"));
      if (training) {
        y = nn::batch_norm_train(t, y, p(t, pre + ".bn.g"), p(t, pre + ".bn.b"), stats ? &(*stats)[k] : nullptr);
      } else {
        y = nn::batch_norm_eval(t, y, p(t, pre + ".bn.g"), p(t, pre + ".bn.b"),
                                params_.at(pre + ".bn.running_mean").value,
                                params_.at(pre + ".bn.running_var").value);
      }
      h = nn::max_pool_time(t, nn::relu(t, y), B, cfg_.pools[k]);
    }
    nn::Var pooled = nn::adaptive_avg_pool_time(t, h, B, cfg_.pool_bins);
    nn::Var flat = nn::reshape(t, pooled, B, static_cast<Eigen::Index>(cfg_.pool_bins) * cfg_.channels[2]);
    return nn::linear(t, flat, p(t, "fc.w"), p(t, "fc.b"));
  }

  /// Exponential moving average of the batch statistics.
  void update_running_stats(const std::vector<nn::BatchStats>& stats) {
    for (int k = 0; k < 3 && k < static_cast<int>(stats.size()); ++k) {
      const std::string pre = "conv" + std::to_string(k + 1);
      const double m = cfg_.bn_momentum;
      auto& mean = params_.at(pre + ".bn.running_mean").value;
      auto& var = params_.at(pre + ".bn.running_var").value;
      mean = (1.0 - m) * mean + m * stats[k].mean;
      var = (1.0 - m) * var + m * stats[k].var;
    }
  }

  std::vector<PlatformDecision> classify_batch(std::span<const ImuWindow> windows) const {
    nn::Tape t(false);
    const nn::Mat& L = t.value(logits(t, windows, false));
    std::vector<PlatformDecision> out;
    for (Eigen::Index b = 0; b < L.rows(); ++b) out.push_back(decide(L(b, 0), L(b, 1)));
    return out;
  }

  PlatformDecision classify(const ImuWindow& window) const {
    return classify_batch(std::span<const ImuWindow>(&window, 1)).front();
  }

 private:
  nn::Var p(nn::Tape& t, const std::string& name) const { return t.param(params_, params_.id(name)); }

  void build() {
    int c_in = cfg_.input_dims;
    for (int k = 0; k < 3; ++k) {
      const std::string pre = "conv" + std::to_string(k + 1);
      const int c_out = cfg_.channels[k];
      const int fan_in = c_in * cfg_.kernels[k];
      std::normal_distribution<double> kaiming(0.0, std::sqrt(2.0 / fan_in));
      nn::Mat w(c_out, fan_in);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = kaiming(rng_);
      params_.add(pre + ".w", std::move(w));
      params_.add(pre + ".b", nn::Mat::Zero(1, c_out));
      params_.add(pre + ".bn.g", nn::Mat::Ones(1, c_out));
      params_.add(pre + ".bn.b", nn::Mat::Zero(1, c_out));
      params_.add(pre + ".bn.running_mean", nn::Mat::Zero(1, c_out));
      params_.add(pre + ".bn.running_var", nn::Mat::Ones(1, c_out));
      c_in = c_out;
    }
    const int flat = cfg_.pool_bins * cfg_.channels[2];
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(flat), 1.0 / std::sqrt(flat));
    nn::Mat w(cfg_.n_classes, flat);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng_);
    params_.add("fc.w", std::move(w));
    params_.add("fc.b", nn::Mat::Zero(1, cfg_.n_classes));
  }

  ClassifierConfig cfg_;
  nn::ParamStore params_;
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Training and persistence

struct LabeledWindow {
  ImuWindow window;
  Platform label = Platform::Quadruped;
};

/// Cross-entropy training with Adam; running BN statistics are refreshed
/// after every step. Returns the per-step batch loss.
inline std::vector<double> train_classifier(PlatformClassifier& clf, const std::vector<LabeledWindow>& data,
                                            const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorCode::InsufficientData, "no classifier training windows");
  AdamState adam = make_adam_state(clf.params());
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> losses;
  long step = 0;
  if (log) *log << "step,loss\n";
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) return losses;
      std::vector<ImuWindow> windows;
      std::vector<int> labels;
      for (std::size_t k = i; k < std::min(order.size(), i + cfg.batch_size); ++k) {
        windows.push_back(data[order[k]].window);
        labels.push_back(static_cast<int>(data[order[k]].label));
      }
      clf.params().zero_grad();
      nn::Tape t;
      std::vector<nn::BatchStats> stats;
      nn::Var loss = nn::softmax_cross_entropy(t, clf.logits(t, windows, true, &stats), labels);
      t.backward(loss);
      t.collect_param_grads(clf.params());
      adam_step(clf.params(), adam, cfg, ++step);
      clf.update_running_stats(stats);
      losses.push_back(t.value(loss)(0, 0));
      if (log) *log << step << "," << losses.back() << "\n";
    }
  }
  return losses;
}

inline double classifier_accuracy(const PlatformClassifier& clf, const std::vector<LabeledWindow>& data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < data.size(); i += kChunk) {
    std::vector<ImuWindow> windows;
    for (std::size_t k = i; k < std::min(data.size(), i + kChunk); ++k) windows.push_back(data[k].window);
    const auto decisions = clf.classify_batch(windows);
    for (std::size_t k = 0; k < decisions.size(); ++k) hits += decisions[k].label == data[i + k].label;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

inline constexpr const char* kClassifierCheckpointKind = "platform-classifier";

inline void save_classifier(const std::string& path, const PlatformClassifier& clf) {
  KeyValueFile kv;
  clf.config().write(kv);
  save_checkpoint(path, kClassifierCheckpointKind, kv, clf.params());
}

inline PlatformClassifier load_classifier(const std::string& path) {
  const CheckpointHeader h = read_checkpoint_header(path);
  PlatformClassifier clf(ClassifierConfig::from(h.config));
  load_checkpoint(path, kClassifierCheckpointKind, clf.params());
  return clf;
}

// ---------------------------------------------------------------------------
// Routing

/// One CSV row per routed window: index, label, confidence.
class RoutingLog {
 public:
  explicit RoutingLog(std::ostream* out = nullptr) : out_(out) {
    if (out_) *out_ << "window,label,confidence\n";
  }

  void record(long window, const PlatformDecision& d) {
    decisions_.push_back(d);
    if (out_) *out_ << window << "," << to_string(d.label) << "," << d.confidence << "\n";
  }

  const std::vector<PlatformDecision>& decisions() const { return decisions_; }

 private:
  std::ostream* out_;
  std::vector<PlatformDecision> decisions_;
};

/// Expert matching the classifier's decision for `window`.
template <class Expert>
const Expert& route(const ImuWindow& window, const PlatformClassifier& clf,
                    const std::map<Platform, Expert>& experts, RoutingLog* log = nullptr, long index = 0) {
  for (Platform p : {Platform::Quadruped, Platform::Human}) {
    if (!experts.count(p)) throw Error(ErrorCode::MissingExpert, std::string("no expert for ") + to_string(p));
  }
  const PlatformDecision d = clf.classify(window);
  if (log) log->record(index, d);
  return experts.at(d.label);
}

}  // namespace xio

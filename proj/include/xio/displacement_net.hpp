#pragma once

// Segment-embedding encoder/decoder with two-stage (temporal, then
// cross-dimension router) attention that regresses a window displacement
// and a diagonal covariance.
//
// Feature tensors of shape (segments x dims x width) are carried as matrices
// with one row per (sample, dim, segment), dims-major: row
// b * (D * N) + j * N + i. Temporal attention then works on contiguous row
// blocks; the dimension stage permutes to segments-major first.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "xio/autodiff.hpp"
#include "xio/config.hpp"
#include "xio/imu.hpp"
#include "xio/state_estimator.hpp"

namespace xio {

struct NetConfig {
  int window_length = 200;   // L
  int segment_length = 25;   // L_seg
  int input_dims = 6;        // D
  int d_model = 64;
  int heads = 4;
  int layers = 3;            // encoder depth N
  int routers = 2;
  int mlp_hidden = 0;        // 0 -> 2 * d_model
  int decoder_segments = 0;  // 0 -> coarsest encoder resolution
  std::uint64_t seed = 1;

  int segments() const { return window_length / segment_length; }
  int hidden() const { return mlp_hidden > 0 ? mlp_hidden : 2 * d_model; }
  int segments_at(int layer) const {
    // layer 0 is the embedding, layer 1 keeps resolution, each later layer halves it
    return layer <= 1 ? segments() : segments() >> (layer - 1);
  }
  int dec_segments() const { return decoder_segments > 0 ? decoder_segments : segments_at(layers); }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, "NetConfig: " + m); };
    if (window_length <= 0 || segment_length <= 0 || window_length % segment_length != 0) {
      fail("window_length must be a positive multiple of segment_length");
    }
    if (input_dims < 1) fail("input_dims must be >= 1");
    if (d_model < 1 || heads < 1 || d_model % heads != 0) fail("d_model must be divisible by heads");
    if (layers < 1) fail("layers must be >= 1");
    if (routers < 1) fail("routers must be >= 1");
    if (segments() % (1 << (layers - 1)) != 0) fail("segment count must be divisible by 2^(layers-1)");
    if (decoder_segments < 0 || mlp_hidden < 0) fail("negative size");
  }

  void write(KeyValueFile& kv) const {
    kv.set("window_length", std::to_string(window_length));
    kv.set("segment_length", std::to_string(segment_length));
    kv.set("input_dims", std::to_string(input_dims));
    kv.set("d_model", std::to_string(d_model));
    kv.set("heads", std::to_string(heads));
    kv.set("layers", std::to_string(layers));
    kv.set("routers", std::to_string(routers));
    kv.set("mlp_hidden", std::to_string(mlp_hidden));
    kv.set("decoder_segments", std::to_string(decoder_segments));
    kv.set("seed", std::to_string(seed));
  }

  static NetConfig from(const KeyValueFile& kv) {
    NetConfig c;
    c.window_length = static_cast<int>(kv.get_int("window_length", c.window_length));
    c.segment_length = static_cast<int>(kv.get_int("segment_length", c.segment_length));
    c.input_dims = static_cast<int>(kv.get_int("input_dims", c.input_dims));
    c.d_model = static_cast<int>(kv.get_int("d_model", c.d_model));
    c.heads = static_cast<int>(kv.get_int("heads", c.heads));
    c.layers = static_cast<int>(kv.get_int("layers", c.layers));
    c.routers = static_cast<int>(kv.get_int("routers", c.routers));
    c.mlp_hidden = static_cast<int>(kv.get_int("mlp_hidden", c.mlp_hidden));
    c.decoder_segments = static_cast<int>(kv.get_int("decoder_segments", c.decoder_segments));
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(c.seed)));
    c.validate();
    return c;
  }
};

/// Plain (segments x dims x width) tensor extracted from a graph node.
struct FeatureTensor {
  int segments = 0;
  int dims = 0;
  int width = 0;
  std::vector<double> data;  // [i][j][k]

  double at(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * dims + j) * width + k];
  }
  bool finite() const {
    for (double x : data) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }
};

/// Graph-side feature tensor for a batch.
struct Feature {
  nn::Var data;
  int batch = 1;
  int segments = 0;
  int dims = 0;
};

/// Head outputs for a batch: rows are samples, columns (d_x, d_y, d_z, s_x, s_y, s_z)
/// with covariance diag(exp(2 s)).
struct HeadOutput {
  nn::Var out;
  int batch = 1;
};

inline DisplacementEstimate to_estimate(const nn::Mat& head_row) {
  DisplacementEstimate e;
  e.d = Vec3(head_row(0, 0), head_row(0, 1), head_row(0, 2));
  e.cov = Mat3::Zero();
  for (int k = 0; k < 3; ++k) e.cov(k, k) = std::exp(2.0 * head_row(0, 3 + k));
  return e;
}

class DisplacementNet {
 public:
  explicit DisplacementNet(const NetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    build();
  }

  const NetConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // -- building blocks ------------------------------------------------------

  /// h_{i,j} = H x_{i,j} + E_pos_{i,j} for every window of the batch.
  Feature embed(nn::Tape& t, std::span<const ImuWindow> windows) const {
    const int L = cfg_.window_length, S = cfg_.segment_length, N = cfg_.segments(), D = cfg_.input_dims;
    if (D != 6) throw Error(ErrorCode::ShapeMismatch, "IMU windows carry 6 channels; use embed_segments()");
    const int B = static_cast<int>(windows.size());
    nn::Mat x(static_cast<Eigen::Index>(B) * D * N, S);
    for (int b = 0; b < B; ++b) {
      const ImuWindow& w = windows[b];
      if (static_cast<int>(w.size()) != L) {
        throw Error(ErrorCode::ShapeMismatch,
                    "window has " + std::to_string(w.size()) + " samples, expected " + std::to_string(L));
      }
      for (int j = 0; j < D; ++j) {
        for (int i = 0; i < N; ++i) {
          for (int s = 0; s < S; ++s) {
            const ImuSample& smp = w[i * S + s];
            x(row(b, j, i, N, D), s) = j < 3 ? smp.gyro(j) : smp.accel(j - 3);
          }
        }
      }
    }
    return embed_segments(t, x, B);
  }

  /// Embedding of raw channels given as (B * D * N) x L_seg segment rows.
  Feature embed_segments(nn::Tape& t, const nn::Mat& segments, int batch) const {
    const int N = cfg_.segments(), D = cfg_.input_dims;
    if (segments.rows() != static_cast<Eigen::Index>(batch) * D * N || segments.cols() != cfg_.segment_length) {
      throw Error(ErrorCode::ShapeMismatch, "segment matrix shape mismatch");
    }
    nn::Var x = t.constant(segments);
    nn::Var h = nn::matmul_transposed(t, x, p(t, "embed.proj"));
    nn::Var pos = nn::tile_rows(t, p(t, "embed.pos"), batch);
    return Feature{nn::add(t, h, pos), batch, N, D};
  }

  /// Per-dimension multi-head self-attention over segments (pre-norm block).
  Feature temporal_attention(nn::Tape& t, const Feature& x, const std::string& prefix) const {
    const std::string pre = prefix + ".time";
    const int groups = x.batch * x.dims;
    nn::Var u = layer_norm(t, x.data, pre + ".ln1");
    nn::Var a = mha(t, u, u, groups, pre + ".attn");
    nn::Var y = nn::add(t, x.data, a);
    y = nn::add(t, y, mlp(t, layer_norm(t, y, pre + ".ln2"), pre + ".mlp"));
    return Feature{y, x.batch, x.segments, x.dims};
  }

  /// Router attention across dimensions for each segment: learnable routers
  /// gather from the D features, then the features read back from them.
  Feature dimensional_attention(nn::Tape& t, const Feature& x, const std::string& prefix) const {
    const std::string pre = prefix + ".dim";
    const int N = x.segments, D = x.dims, B = x.batch;
    const int groups = B * N;
    nn::Var y = nn::permute_rows(t, x.data, to_segment_major(B, N, D));
    nn::Var u = layer_norm(t, y, pre + ".ln1");
    nn::Var routers = nn::tile_rows(t, p(t, pre + ".router"), B);
    nn::Var buffer = mha(t, routers, u, groups, pre + ".send");
    nn::Var recv = mha(t, u, buffer, groups, pre + ".recv");
    y = nn::add(t, y, recv);
    y = nn::add(t, y, mlp(t, layer_norm(t, y, pre + ".ln2"), pre + ".mlp"));
    y = nn::permute_rows(t, y, to_dim_major(B, N, D));
    return Feature{y, B, N, D};
  }

  Feature two_stage(nn::Tape& t, const Feature& x, const std::string& prefix) const {
    return dimensional_attention(t, temporal_attention(t, x, prefix), prefix);
  }

  /// Concatenates adjacent segment pairs and projects back to d_model.
  Feature merge_segments(nn::Tape& t, const Feature& x, const std::string& prefix) const {
    if (x.segments % 2 != 0) {
      throw Error(ErrorCode::OddSegmentCount, std::to_string(x.segments) + " segments cannot be merged pairwise");
    }
    const int d = cfg_.d_model;
    const Eigen::Index rows = static_cast<Eigen::Index>(x.batch) * x.dims * (x.segments / 2);
    nn::Var pairs = nn::reshape(t, x.data, rows, 2 * d);
    nn::Var y = nn::linear(t, pairs, p(t, prefix + ".merge.w"), p(t, prefix + ".merge.b"));
    return Feature{y, x.batch, x.segments / 2, x.dims};
  }

  /// Returns layers + 1 tensors; element 0 is the embedding itself.
  std::vector<Feature> encode(nn::Tape& t, const Feature& embedding) const {
    std::vector<Feature> out{embedding};
    Feature cur = embedding;
    for (int k = 1; k <= cfg_.layers; ++k) {
      const std::string pre = "enc." + std::to_string(k);
      if (k > 1) cur = merge_segments(t, cur, pre);
      cur = two_stage(t, cur, pre);
      out.push_back(cur);
    }
    return out;
  }

  /// Decoder over the encoder pyramid followed by the regression head.
  HeadOutput decode(nn::Tape& t, const std::vector<Feature>& enc) const {
    if (static_cast<int>(enc.size()) != cfg_.layers + 1) {
      throw Error(ErrorCode::ShapeMismatch, "decoder expects layers + 1 encoder outputs");
    }
    const int B = enc.front().batch, D = cfg_.input_dims, Nd = cfg_.dec_segments();
    Feature x{nn::tile_rows(t, p(t, "dec.pos"), B), B, Nd, D};
    for (int k = 0; k <= cfg_.layers; ++k) {
      const std::string pre = "dec." + std::to_string(k);
      x = two_stage(t, x, pre);
      nn::Var q = layer_norm(t, x.data, pre + ".cross.ln_q");
      nn::Var kv = layer_norm(t, enc[k].data, pre + ".cross.ln_kv");
      nn::Var c = mha(t, q, kv, B * D, pre + ".cross.attn");
      nn::Var y = nn::add(t, x.data, c);
      y = nn::add(t, y, mlp(t, layer_norm(t, y, pre + ".ln_mlp"), pre + ".mlp"));
      x.data = y;
    }
    nn::Var z = layer_norm(t, x.data, "dec.ln_out");
    const Eigen::Index F = static_cast<Eigen::Index>(Nd) * D * cfg_.d_model;
    // readout scaled by 1/sqrt(fan-in)
    nn::Var flat = nn::scale(t, nn::reshape(t, z, B, F), 1.0 / std::sqrt(static_cast<double>(F)));
    return HeadOutput{nn::linear(t, flat, p(t, "head.w"), p(t, "head.b")), B};
  }

  HeadOutput forward(nn::Tape& t, std::span<const ImuWindow> windows) const {
    return decode(t, encode(t, embed(t, windows)));
  }

  DisplacementEstimate predict(const ImuWindow& window) const {
    nn::Tape t(false);
    const HeadOutput h = forward(t, std::span<const ImuWindow>(&window, 1));
    return to_estimate(t.value(h.out));
  }

  std::vector<DisplacementEstimate> predict_batch(std::span<const ImuWindow> windows) const {
    nn::Tape t(false);
    const HeadOutput h = forward(t, windows);
    std::vector<DisplacementEstimate> out;
    for (Eigen::Index b = 0; b < t.value(h.out).rows(); ++b) out.push_back(to_estimate(t.value(h.out).row(b)));
    return out;
  }

  /// Copies sample `b` of a feature out of the graph.
  static FeatureTensor to_tensor(const nn::Tape& t, const Feature& f, int b = 0) {
    const nn::Mat& m = t.value(f.data);
    FeatureTensor out;
    out.segments = f.segments;
    out.dims = f.dims;
    out.width = static_cast<int>(m.cols());
    out.data.resize(static_cast<std::size_t>(f.segments) * f.dims * out.width);
    for (int i = 0; i < f.segments; ++i) {
      for (int j = 0; j < f.dims; ++j) {
        for (int k = 0; k < out.width; ++k) {
          out.data[(static_cast<std::size_t>(i) * f.dims + j) * out.width + k] =
              m(row(b, j, i, f.segments, f.dims), k);
        }
      }
    }
    return out;
  }

  /// Inverse of to_tensor for a single-sample batch.
  static Feature from_tensor(nn::Tape& t, const FeatureTensor& x) {
    nn::Mat m(static_cast<Eigen::Index>(x.segments) * x.dims, x.width);
    for (int i = 0; i < x.segments; ++i) {
      for (int j = 0; j < x.dims; ++j) {
        for (int k = 0; k < x.width; ++k) m(row(0, j, i, x.segments, x.dims), k) = x.at(i, j, k);
      }
    }
    return Feature{t.constant(std::move(m)), 1, x.segments, x.dims};
  }

  static Eigen::Index row(int b, int j, int i, int N, int D) {
    return (static_cast<Eigen::Index>(b) * D + j) * N + i;
  }

  /// Parameter names in creation order.
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    for (const auto& prm : params_.all()) names.push_back(prm.name);
    return names;
  }

 private:
  static std::vector<int> to_segment_major(int B, int N, int D) {
    std::vector<int> perm(static_cast<std::size_t>(B) * N * D);
    for (int b = 0; b < B; ++b) {
      for (int i = 0; i < N; ++i) {
        for (int j = 0; j < D; ++j) {
          perm[(static_cast<std::size_t>(b) * N + i) * D + j] = static_cast<int>(row(b, j, i, N, D));
        }
      }
    }
    return perm;
  }

  static std::vector<int> to_dim_major(int B, int N, int D) {
    std::vector<int> perm(static_cast<std::size_t>(B) * N * D);
    for (int b = 0; b < B; ++b) {
      for (int i = 0; i < N; ++i) {
        for (int j = 0; j < D; ++j) {
          perm[row(b, j, i, N, D)] = (b * N + i) * D + j;
        }
      }
    }
    return perm;
  }

  nn::Var p(nn::Tape& t, const std::string& name) const { return t.param(params_, params_.id(name)); }

  nn::Var layer_norm(nn::Tape& t, nn::Var x, const std::string& pre) const {
    return nn::layer_norm(t, x, p(t, pre + ".g"), p(t, pre + ".b"));
  }

  nn::Var mlp(nn::Tape& t, nn::Var x, const std::string& pre) const {
    nn::Var h = nn::gelu(t, nn::linear(t, x, p(t, pre + ".w1"), p(t, pre + ".b1")));
    return nn::linear(t, h, p(t, pre + ".w2"), p(t, pre + ".b2"));
  }

  nn::Var mha(nn::Tape& t, nn::Var xq, nn::Var xkv, int groups, const std::string& pre) const {
    nn::Var q = nn::linear(t, xq, p(t, pre + ".wq"), p(t, pre + ".bq"));
    nn::Var k = nn::linear(t, xkv, p(t, pre + ".wk"), p(t, pre + ".bk"));
    nn::Var v = nn::linear(t, xkv, p(t, pre + ".wv"), p(t, pre + ".bv"));
    nn::Var a = nn::attention(t, q, k, v, groups, cfg_.heads);
    return nn::linear(t, a, p(t, pre + ".wo"), p(t, pre + ".bo"));
  }

  // -- parameter construction ----------------------------------------------

  nn::Mat uniform(int rows, int cols, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    nn::Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
    return m;
  }

  nn::Mat gaussian(int rows, int cols, double std) {
    std::normal_distribution<double> dist(0.0, std);
    nn::Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
    return m;
  }

  void add_linear(const std::string& w, const std::string& b, int out, int in) {
    params_.add(w, uniform(out, in, in));
    params_.add(b, nn::Mat::Zero(1, out));
  }

  void add_ln(const std::string& pre) {
    params_.add(pre + ".g", nn::Mat::Ones(1, cfg_.d_model));
    params_.add(pre + ".b", nn::Mat::Zero(1, cfg_.d_model));
  }

  void add_mha(const std::string& pre) {
    const int d = cfg_.d_model;
    add_linear(pre + ".wq", pre + ".bq", d, d);
    add_linear(pre + ".wk", pre + ".bk", d, d);
    add_linear(pre + ".wv", pre + ".bv", d, d);
    add_linear(pre + ".wo", pre + ".bo", d, d);
  }

  void add_mlp(const std::string& pre) {
    add_linear(pre + ".w1", pre + ".b1", cfg_.hidden(), cfg_.d_model);
    add_linear(pre + ".w2", pre + ".b2", cfg_.d_model, cfg_.hidden());
  }

  void add_two_stage(const std::string& pre, int segments) {
    add_ln(pre + ".time.ln1");
    add_mha(pre + ".time.attn");
    add_ln(pre + ".time.ln2");
    add_mlp(pre + ".time.mlp");
    params_.add(pre + ".dim.router", gaussian(segments * cfg_.routers, cfg_.d_model, 1.0));
    add_ln(pre + ".dim.ln1");
    add_mha(pre + ".dim.send");
    add_mha(pre + ".dim.recv");
    add_ln(pre + ".dim.ln2");
    add_mlp(pre + ".dim.mlp");
  }

  void build() {
    rng_.seed(cfg_.seed);
    const int d = cfg_.d_model, D = cfg_.input_dims;
    params_.add("embed.proj", uniform(d, cfg_.segment_length, cfg_.segment_length));
    params_.add("embed.pos", gaussian(D * cfg_.segments(), d, 0.02));
    for (int k = 1; k <= cfg_.layers; ++k) {
      const std::string pre = "enc." + std::to_string(k);
      if (k > 1) add_linear(pre + ".merge.w", pre + ".merge.b", d, 2 * d);
      add_two_stage(pre, cfg_.segments_at(k));
    }
    const int Nd = cfg_.dec_segments();
    params_.add("dec.pos", gaussian(D * Nd, d, 0.02));
    for (int k = 0; k <= cfg_.layers; ++k) {
      const std::string pre = "dec." + std::to_string(k);
      add_two_stage(pre, Nd);
      add_ln(pre + ".cross.ln_q");
      add_ln(pre + ".cross.ln_kv");
      add_mha(pre + ".cross.attn");
      add_ln(pre + ".ln_mlp");
      add_mlp(pre + ".mlp");
    }
    add_ln("dec.ln_out");
    const int flat = Nd * D * d;
    params_.add("head.w", uniform(6, flat, flat));
    nn::Mat hb = nn::Mat::Zero(1, 6);
    hb.rightCols(3).setConstant(std::log(0.1));  // covariance starts at 0.01 I
    params_.add("head.b", hb);
  }

  NetConfig cfg_;
  nn::ParamStore params_;
  std::mt19937_64 rng_;
};

}  // namespace xio

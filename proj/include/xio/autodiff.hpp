#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records one forward pass as a list of nodes; each op registers a
// closure that pushes its output gradient back to its inputs. Parameters
// live in a ParamStore and enter a tape as leaves; after backward() their
// gradients are added to the store in node order, so repeated runs reduce
// in a fixed order.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "xio/error.hpp"

namespace xio::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
};

class ParamStore {
 public:
  int add(const std::string& name, Mat value) {
    if (index_.count(name)) throw Error(ErrorCode::InvalidConfig, "duplicate parameter " + name);
    const int id = static_cast<int>(params_.size());
    Parameter p{name, std::move(value), Mat()};
    p.grad = Mat::Zero(p.value.rows(), p.value.cols());
    params_.push_back(std::move(p));
    index_[name] = id;
    return id;
  }

  int size() const { return static_cast<int>(params_.size()); }
  Parameter& operator[](int id) { return params_[id]; }
  const Parameter& operator[](int id) const { return params_[id]; }

  int id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorCode::ShapeMismatch, "unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& at(const std::string& name) { return params_[id(name)]; }
  const Parameter& at(const std::string& name) const { return params_[id(name)]; }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  long scalar_count() const {
    long n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, int> index_;
};

struct Var {
  int id = -1;
};

class Tape {
 public:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, int)> backward;
    int param = -1;
    bool requires_grad = false;
  };

  explicit Tape(bool record = true) : record_(record) { nodes_.reserve(256); }

  bool recording() const { return record_; }

  Var constant(Mat value) { return push(std::move(value), false); }

  Var param(const ParamStore& store, int id) {
    Var v = push(store[id].value, record_);
    nodes_[v.id].param = id;
    return v;
  }

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Creates an op node. `fn` is only kept when some input requires grad.
  Var op(Mat value, std::initializer_list<Var> inputs, std::function<void(Tape&, int)> fn) {
    bool rg = false;
    if (record_) {
      for (Var in : inputs) rg = rg || nodes_[in.id].requires_grad;
    }
    Var v = push(std::move(value), rg);
    if (rg) nodes_[v.id].backward = std::move(fn);
    return v;
  }

  /// Adds `g` into the gradient of `v` when `v` takes part in differentiation.
  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  Mat& grad_ref(int id) { return nodes_[id].grad; }

  /// Back-propagates from the scalar node `loss` (seed 1).
  void backward(Var loss) {
    if (value(loss).size() != 1) throw Error(ErrorCode::ShapeMismatch, "backward needs a scalar loss");
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Mat::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Adds gradients of parameter leaves into `store`.
  void collect_param_grads(ParamStore& store) const {
    for (const Node& n : nodes_) {
      if (n.param >= 0 && n.grad.size() != 0) store[n.param].grad += n.grad;
    }
  }

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  Var push(Mat value, bool rg) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
};

inline void check(bool cond, const std::string& what) {
  if (!cond) throw Error(ErrorCode::ShapeMismatch, what);
}

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

inline Var add(Tape& t, Var a, Var b) {
  check(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(), "add: shape");
  return t.op(t.value(a) + t.value(b), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  check(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(), "sub: shape");
  return t.op(t.value(a) - t.value(b), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

inline Var mul(Tape& t, Var a, Var b) {
  check(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(), "mul: shape");
  return t.op(t.value(a).cwiseProduct(t.value(b)), {a, b}, [a, b](Tape& t, int self) {
    const Mat g = t.grad_ref(self);
    t.accumulate(a, g.cwiseProduct(t.value(b)));
    t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

inline Var scale(Tape& t, Var a, double c) {
  return t.op(t.value(a) * c, {a}, [a, c](Tape& t, int self) { t.accumulate(a, t.grad_ref(self) * c); });
}

inline Var matmul(Tape& t, Var a, Var b) {
  check(t.value(a).cols() == t.value(b).rows(), "matmul: inner dimension");
  return t.op(t.value(a) * t.value(b), {a, b}, [a, b](Tape& t, int self) {
    const Mat g = t.grad_ref(self);
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

/// y = x W^T with W stored (out x in).
inline Var matmul_transposed(Tape& t, Var x, Var w) {
  check(t.value(x).cols() == t.value(w).cols(), "matmul_transposed: shape");
  return t.op(t.value(x) * t.value(w).transpose(), {x, w}, [x, w](Tape& t, int self) {
    const Mat g = t.grad_ref(self);
    if (t.requires_grad(x)) t.accumulate(x, g * t.value(w));
    if (t.requires_grad(w)) t.accumulate(w, g.transpose() * t.value(x));
  });
}

/// y = x W^T + b with W stored (out x in) and b (1 x out).
inline Var linear(Tape& t, Var x, Var w, Var b) {
  const Mat& X = t.value(x);
  const Mat& W = t.value(w);
  const Mat& B = t.value(b);
  check(X.cols() == W.cols() && B.rows() == 1 && B.cols() == W.rows(), "linear: shape");
  Mat y = X * W.transpose();
  y.rowwise() += B.row(0);
  return t.op(std::move(y), {x, w, b}, [x, w, b](Tape& t, int self) {
    const Mat g = t.grad_ref(self);
    if (t.requires_grad(x)) t.accumulate(x, g * t.value(w));
    if (t.requires_grad(w)) t.accumulate(w, g.transpose() * t.value(x));
    if (t.requires_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

/// Stacks `times` copies of `a` vertically.
inline Var tile_rows(Tape& t, Var a, int times) {
  const Mat& A = t.value(a);
  Mat out(A.rows() * times, A.cols());
  for (int k = 0; k < times; ++k) out.middleRows(k * A.rows(), A.rows()) = A;
  return t.op(std::move(out), {a}, [a, times](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    const auto r = t.value(a).rows();
    Mat acc = Mat::Zero(r, g.cols());
    for (int k = 0; k < times; ++k) acc += g.middleRows(k * r, r);
    t.accumulate(a, acc);
  });
}

inline double gelu_scalar(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad_scalar(double x) {
  constexpr double c = 0.7978845608028654;
  const double u = c * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

/// GELU, tanh approximation.
inline Var gelu(Tape& t, Var a) {
  return t.op(t.value(a).unaryExpr(&gelu_scalar), {a}, [a](Tape& t, int self) {
    t.accumulate(a, t.grad_ref(self).cwiseProduct(t.value(a).unaryExpr(&gelu_grad_scalar)));
  });
}

inline Var relu(Tape& t, Var a) {
  return t.op(t.value(a).cwiseMax(0.0), {a}, [a](Tape& t, int self) {
    const Mat mask = (t.value(a).array() > 0.0).cast<double>().matrix();
    t.accumulate(a, t.grad_ref(self).cwiseProduct(mask));
  });
}

inline Var exp(Tape& t, Var a) {
  return t.op(t.value(a).array().exp().matrix(), {a}, [a](Tape& t, int self) {
    t.accumulate(a, t.grad_ref(self).cwiseProduct(t.value(Var{self})));
  });
}

inline Var sum(Tape& t, Var a) {
  Mat s(1, 1);
  s(0, 0) = t.value(a).sum();
  return t.op(std::move(s), {a}, [a](Tape& t, int self) {
    const double g = t.grad_ref(self)(0, 0);
    t.accumulate(a, Mat::Constant(t.value(a).rows(), t.value(a).cols(), g));
  });
}

/// Sum over entries of the componentwise Huber function with knee `delta`.
inline Var huber_sum(Tape& t, Var e, double delta) {
  const Mat& E = t.value(e);
  Mat s(1, 1);
  s(0, 0) = E.unaryExpr([delta](double x) {
               const double ax = std::abs(x);
               return ax <= delta ? 0.5 * x * x : delta * ax - 0.5 * delta * delta;
             }).sum();
  return t.op(std::move(s), {e}, [e, delta](Tape& t, int self) {
    const double g = t.grad_ref(self)(0, 0);
    t.accumulate(e, t.value(e).unaryExpr([delta, g](double x) {
      return g * (std::abs(x) <= delta ? x : delta * (x > 0.0 ? 1.0 : -1.0));
    }));
  });
}

// ---------------------------------------------------------------------------
// Normalization

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes each row, then applies per-column gain and bias (1 x d).
inline Var layer_norm(Tape& t, Var x, Var gamma, Var beta) {
  const Mat& X = t.value(x);
  const auto d = X.cols();
  check(t.value(gamma).cols() == d && t.value(beta).cols() == d, "layer_norm: shape");
  Mat xhat(X.rows(), d);
  Eigen::VectorXd inv_std(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double mean = X.row(r).mean();
    const double var = (X.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (X.row(r).array() - mean) * inv_std(r);
  }
  Mat y = xhat.array().rowwise() * t.value(gamma).row(0).array();
  y.rowwise() += t.value(beta).row(0);
  return t.op(std::move(y), {x, gamma, beta},
              [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int self) {
                const Mat g = t.grad_ref(self);
                if (t.requires_grad(gamma)) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                if (t.requires_grad(beta)) t.accumulate(beta, g.colwise().sum());
                if (t.requires_grad(x)) {
                  const Mat gx = g.array().rowwise() * t.value(gamma).row(0).array();
                  const double d = static_cast<double>(gx.cols());
                  Mat dx(gx.rows(), gx.cols());
                  for (Eigen::Index r = 0; r < gx.rows(); ++r) {
                    const double m1 = gx.row(r).mean();
                    const double m2 = gx.row(r).dot(xhat.row(r)) / d;
                    dx.row(r) = inv_std(r) * (gx.row(r).array() - m1 - xhat.row(r).array() * m2);
                  }
                  t.accumulate(x, dx);
                }
              });
}

inline constexpr double kBatchNormEps = 1e-5;

struct BatchStats {
  RowVec mean;
  RowVec var;  // biased
};

/// Batch normalization over rows (per column) using the batch statistics.
/// The statistics used are written to `stats` for running-average updates.
inline Var batch_norm_train(Tape& t, Var x, Var gamma, Var beta, BatchStats* stats) {
  const Mat& X = t.value(x);
  const double n = static_cast<double>(X.rows());
  const RowVec mean = X.colwise().mean();
  const RowVec var = (X.rowwise() - mean).array().square().colwise().sum().matrix() / n;
  const RowVec inv_std = (var.array() + kBatchNormEps).rsqrt().matrix();
  Mat xhat = (X.rowwise() - mean).array().rowwise() * inv_std.array();
  if (stats) *stats = BatchStats{mean, var};
  Mat y = xhat.array().rowwise() * t.value(gamma).row(0).array();
  y.rowwise() += t.value(beta).row(0);
  return t.op(std::move(y), {x, gamma, beta},
              [x, gamma, beta, xhat = std::move(xhat), inv_std, n](Tape& t, int self) {
                const Mat g = t.grad_ref(self);
                if (t.requires_grad(gamma)) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                if (t.requires_grad(beta)) t.accumulate(beta, g.colwise().sum());
                if (t.requires_grad(x)) {
                  const Mat gx = g.array().rowwise() * t.value(gamma).row(0).array();
                  const RowVec m1 = gx.colwise().sum() / n;
                  const RowVec m2 = gx.cwiseProduct(xhat).colwise().sum() / n;
                  Mat dx = (gx.rowwise() - m1) - (xhat.array().rowwise() * m2.array()).matrix();
                  dx = dx.array().rowwise() * inv_std.array();
                  t.accumulate(x, dx);
                }
              });
}

/// Batch normalization with frozen (running) statistics.
inline Var batch_norm_eval(Tape& t, Var x, Var gamma, Var beta, const RowVec& mean, const RowVec& var) {
  const RowVec inv_std = (var.array() + kBatchNormEps).rsqrt().matrix();
  Mat xhat = (t.value(x).rowwise() - mean).array().rowwise() * inv_std.array();
  Mat y = xhat.array().rowwise() * t.value(gamma).row(0).array();
  y.rowwise() += t.value(beta).row(0);
  return t.op(std::move(y), {x, gamma, beta},
              [x, gamma, beta, xhat = std::move(xhat), inv_std](Tape& t, int self) {
                const Mat g = t.grad_ref(self);
                if (t.requires_grad(gamma)) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                if (t.requires_grad(beta)) t.accumulate(beta, g.colwise().sum());
                if (t.requires_grad(x)) {
                  const RowVec s = t.value(gamma).row(0).cwiseProduct(inv_std);
                  t.accumulate(x, (g.array().rowwise() * s.array()).matrix());
                }
              });
}

// ---------------------------------------------------------------------------
// Attention

/// Grouped multi-head scaled dot-product attention.
///
/// Rows of `q` are `groups` contiguous blocks of `tq` queries, rows of `k`
/// and `v` are `groups` blocks of `tk` keys. Columns split into `heads`
/// equal slices. Each (group, head) computes softmax(Q K^T / sqrt(d_k)) V.
inline Var attention(Tape& t, Var q, Var k, Var v, int groups, int heads) {
  const Mat& Q = t.value(q);
  const Mat& K = t.value(k);
  const Mat& V = t.value(v);
  check(Q.cols() == K.cols() && K.cols() == V.cols() && K.rows() == V.rows(), "attention: shape");
  check(groups > 0 && Q.rows() % groups == 0 && K.rows() % groups == 0, "attention: groups");
  check(heads > 0 && Q.cols() % heads == 0, "attention: heads");
  const int tq = static_cast<int>(Q.rows() / groups);
  const int tk = static_cast<int>(K.rows() / groups);
  const int dk = static_cast<int>(Q.cols() / heads);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Mat out(Q.rows(), Q.cols());
  std::vector<Mat> probs(static_cast<std::size_t>(groups) * heads);
  for (int g = 0; g < groups; ++g) {
    for (int h = 0; h < heads; ++h) {
      const auto Qh = Q.block(g * tq, h * dk, tq, dk);
      const auto Kh = K.block(g * tk, h * dk, tk, dk);
      const auto Vh = V.block(g * tk, h * dk, tk, dk);
      Mat s = (Qh * Kh.transpose()) * inv_scale;
      for (int r = 0; r < tq; ++r) {
        const double m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
      }
      out.block(g * tq, h * dk, tq, dk) = s * Vh;
      probs[static_cast<std::size_t>(g) * heads + h] = std::move(s);
    }
  }
  return t.op(std::move(out), {q, k, v},
              [q, k, v, groups, heads, tq, tk, dk, inv_scale, probs = std::move(probs)](Tape& t, int self) {
                const Mat G = t.grad_ref(self);
                const Mat& Q = t.value(q);
                const Mat& K = t.value(k);
                const Mat& V = t.value(v);
                Mat dQ = Mat::Zero(Q.rows(), Q.cols());
                Mat dK = Mat::Zero(K.rows(), K.cols());
                Mat dV = Mat::Zero(V.rows(), V.cols());
                for (int g = 0; g < groups; ++g) {
                  for (int h = 0; h < heads; ++h) {
                    const Mat& P = probs[static_cast<std::size_t>(g) * heads + h];
                    const auto Gh = G.block(g * tq, h * dk, tq, dk);
                    const auto Qh = Q.block(g * tq, h * dk, tq, dk);
                    const auto Kh = K.block(g * tk, h * dk, tk, dk);
                    const auto Vh = V.block(g * tk, h * dk, tk, dk);
                    dV.block(g * tk, h * dk, tk, dk) += P.transpose() * Gh;
                    const Mat dP = Gh * Vh.transpose();
                    Mat dS = P.cwiseProduct(dP);
                    const Eigen::VectorXd rs = dS.rowwise().sum();
                    dS -= (P.array().colwise() * rs.array()).matrix();
                    dS *= inv_scale;
                    dQ.block(g * tq, h * dk, tq, dk) += dS * Kh;
                    dK.block(g * tk, h * dk, tk, dk) += dS.transpose() * Qh;
                  }
                }
                t.accumulate(q, dQ);
                t.accumulate(k, dK);
                t.accumulate(v, dV);
              });
}

// ---------------------------------------------------------------------------
// Layout

/// out.row(r) = a.row(perm[r]).
inline Var permute_rows(Tape& t, Var a, std::vector<int> perm) {
  const Mat& A = t.value(a);
  check(static_cast<Eigen::Index>(perm.size()) == A.rows(), "permute_rows: size");
  Mat out(A.rows(), A.cols());
  for (std::size_t r = 0; r < perm.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = A.row(perm[r]);
  return t.op(std::move(out), {a}, [a, perm = std::move(perm)](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    Mat ga = Mat::Zero(g.rows(), g.cols());
    for (std::size_t r = 0; r < perm.size(); ++r) ga.row(perm[r]) += g.row(static_cast<Eigen::Index>(r));
    t.accumulate(a, ga);
  });
}

/// Row-major reinterpretation to (rows x cols).
inline Var reshape(Tape& t, Var a, Eigen::Index rows, Eigen::Index cols) {
  const Mat& A = t.value(a);
  check(rows * cols == A.size(), "reshape: size");
  Mat out = Eigen::Map<const Mat>(A.data(), rows, cols);
  return t.op(std::move(out), {a}, [a](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    const Mat& A = t.value(a);
    t.accumulate(a, Eigen::Map<const Mat>(g.data(), A.rows(), A.cols()));
  });
}

inline Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index n) {
  const Mat& A = t.value(a);
  check(start >= 0 && start + n <= A.cols(), "slice_cols: range");
  return t.op(A.middleCols(start, n), {a}, [a, start, n](Tape& t, int self) {
    Mat ga = Mat::Zero(t.value(a).rows(), t.value(a).cols());
    ga.middleCols(start, n) = t.grad_ref(self);
    t.accumulate(a, ga);
  });
}

// ---------------------------------------------------------------------------
// 1-D convolution helpers. A batch of sequences is stored time-major:
// row (b * T + t), one column per channel.

/// Unfolds windows of `kernel` consecutive steps: row (b, t) of the result
/// holds [x(t), x(t+1), ..., x(t+kernel-1)] (channels fastest).
inline Var im2col(Tape& t, Var x, int batch, int kernel) {
  const Mat& X = t.value(x);
  check(batch > 0 && X.rows() % batch == 0, "im2col: batch");
  const int T = static_cast<int>(X.rows() / batch);
  const int C = static_cast<int>(X.cols());
  if (T < kernel) throw Error(ErrorCode::InputTooShort, "sequence shorter than the convolution kernel");
  const int To = T - kernel + 1;
  Mat out(static_cast<Eigen::Index>(batch) * To, static_cast<Eigen::Index>(C) * kernel);
  for (int b = 0; b < batch; ++b) {
    for (int s = 0; s < To; ++s) {
      for (int k = 0; k < kernel; ++k) {
        out.block(b * To + s, k * C, 1, C) = X.row(b * T + s + k);
      }
    }
  }
  return t.op(std::move(out), {x}, [x, batch, kernel, T, To, C](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    Mat gx = Mat::Zero(static_cast<Eigen::Index>(batch) * T, C);
    for (int b = 0; b < batch; ++b) {
      for (int s = 0; s < To; ++s) {
        for (int k = 0; k < kernel; ++k) gx.row(b * T + s + k) += g.block(b * To + s, k * C, 1, C);
      }
    }
    t.accumulate(x, gx);
  });
}

/// Non-overlapping max pooling along time (stride = pool, trailing steps dropped).
inline Var max_pool_time(Tape& t, Var x, int batch, int pool) {
  const Mat& X = t.value(x);
  const int T = static_cast<int>(X.rows() / batch);
  const int C = static_cast<int>(X.cols());
  const int To = T / pool;
  if (To < 1) throw Error(ErrorCode::InputTooShort, "sequence shorter than the pooling window");
  Mat out(static_cast<Eigen::Index>(batch) * To, C);
  std::vector<int> arg(static_cast<std::size_t>(batch) * To * C);
  for (int b = 0; b < batch; ++b) {
    for (int s = 0; s < To; ++s) {
      for (int c = 0; c < C; ++c) {
        int best = b * T + s * pool;
        for (int k = 1; k < pool; ++k) {
          const int r = b * T + s * pool + k;
          if (X(r, c) > X(best, c)) best = r;
        }
        out(b * To + s, c) = X(best, c);
        arg[(static_cast<std::size_t>(b) * To + s) * C + c] = best;
      }
    }
  }
  return t.op(std::move(out), {x}, [x, C, arg = std::move(arg)](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    Mat gx = Mat::Zero(t.value(x).rows(), t.value(x).cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      for (int c = 0; c < C; ++c) gx(arg[static_cast<std::size_t>(r) * C + c], c) += g(r, c);
    }
    t.accumulate(x, gx);
  });
}

/// Adaptive average pooling along time to `bins` outputs per sequence, with
/// bin i covering [floor(i T / bins), ceil((i + 1) T / bins)).
inline Var adaptive_avg_pool_time(Tape& t, Var x, int batch, int bins) {
  const Mat& X = t.value(x);
  const int T = static_cast<int>(X.rows() / batch);
  const int C = static_cast<int>(X.cols());
  if (T < 1) throw Error(ErrorCode::InputTooShort, "empty sequence before adaptive pooling");
  std::vector<std::pair<int, int>> ranges(bins);
  for (int i = 0; i < bins; ++i) ranges[i] = {(i * T) / bins, ((i + 1) * T + bins - 1) / bins};
  Mat out(static_cast<Eigen::Index>(batch) * bins, C);
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < bins; ++i) {
      const auto [lo, hi] = ranges[i];
      out.row(b * bins + i) = X.middleRows(b * T + lo, hi - lo).colwise().mean();
    }
  }
  return t.op(std::move(out), {x}, [x, batch, bins, T, ranges = std::move(ranges)](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    Mat gx = Mat::Zero(t.value(x).rows(), t.value(x).cols());
    for (int b = 0; b < batch; ++b) {
      for (int i = 0; i < bins; ++i) {
        const auto [lo, hi] = ranges[i];
        const double w = 1.0 / (hi - lo);
        for (int r = lo; r < hi; ++r) gx.row(b * T + r) += w * g.row(b * bins + i);
      }
    }
    t.accumulate(x, gx);
  });
}

/// Mean softmax cross-entropy of `logits` (batch x classes) against labels.
inline Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<int>& labels) {
  const Mat& L = t.value(logits);
  check(static_cast<Eigen::Index>(labels.size()) == L.rows(), "cross_entropy: batch");
  Mat p(L.rows(), L.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < L.rows(); ++r) {
    const double m = L.row(r).maxCoeff();
    p.row(r) = (L.row(r).array() - m).exp();
    const double z = p.row(r).sum();
    p.row(r) /= z;
    loss += -(L(r, labels[r]) - m - std::log(z));
  }
  Mat out(1, 1);
  out(0, 0) = loss / static_cast<double>(L.rows());
  return t.op(std::move(out), {logits}, [logits, labels, p = std::move(p)](Tape& t, int self) {
    const double g = t.grad_ref(self)(0, 0) / static_cast<double>(p.rows());
    Mat gl = p;
    for (Eigen::Index r = 0; r < p.rows(); ++r) gl(r, labels[r]) -= 1.0;
    t.accumulate(logits, gl * g);
  });
}

}  // namespace xio::nn

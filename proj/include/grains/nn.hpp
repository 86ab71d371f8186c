#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "grains/error.hpp"

namespace grains {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class Activation { tanh, linear };

struct Layer {
  Mat W;  // out x in
  Vec b;
  Activation act = Activation::tanh;
};

// A small perceptron applied column-wise: each column of the input is one
// sample. Every layer is tanh unless declared linear.
struct Mlp {
  std::vector<Layer> layers;

  Eigen::Index in_dim() const { return layers.front().W.cols(); }
  Eigen::Index out_dim() const { return layers.back().W.rows(); }
  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.W.size() + l.b.size());
    return n;
  }
  bool operator==(const Mlp& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].act != o.layers[i].act || layers[i].W != o.layers[i].W || layers[i].b != o.layers[i].b) return false;
    }
    return true;
  }
};

// Activations kept for the backward pass: acts[0] is the input, acts[i+1]
// the output of layer i.
struct MlpCache {
  std::vector<Mat> acts;
  const Mat& output() const { return acts.back(); }
};

inline Mlp zeros_like(const Mlp& m) {
  Mlp g = m;
  for (auto& l : g.layers) {
    l.W.setZero();
    l.b.setZero();
  }
  return g;
}

inline void set_zero(Mlp& m) {
  for (auto& l : m.layers) {
    l.W.setZero();
    l.b.setZero();
  }
}

inline MlpCache mlp_forward(const Mlp& m, const Mat& x) {
  if (m.layers.empty()) throw Error("mlp_forward: empty network");
  if (x.rows() != m.in_dim()) {
    throw Error("mlp_forward: input has " + std::to_string(x.rows()) + " rows, network expects " + std::to_string(m.in_dim()));
  }
  MlpCache c;
  c.acts.reserve(m.layers.size() + 1);
  c.acts.push_back(x);
  for (const auto& l : m.layers) {
    Mat z = l.W * c.acts.back();
    z.colwise() += l.b;
    if (l.act == Activation::tanh) z = z.array().tanh().matrix();
    c.acts.push_back(std::move(z));
  }
  return c;
}

inline Vec mlp_forward(const Mlp& m, const Vec& x) {
  return mlp_forward(m, Mat(x)).output().col(0);
}

// Accumulates parameter gradients into `grad` and returns d(loss)/d(input).
inline Mat mlp_backward(const Mlp& m, const MlpCache& c, const Mat& grad_y, Mlp& grad) {
  if (c.acts.size() != m.layers.size() + 1 || grad_y.rows() != m.out_dim() || grad_y.cols() != c.acts.back().cols()) {
    throw Error("mlp_backward: cache or gradient shape does not match the network");
  }
  Mat d = grad_y;
  for (std::size_t i = m.layers.size(); i-- > 0;) {
    const auto& l = m.layers[i];
    if (l.act == Activation::tanh) d.array() *= 1.0 - c.acts[i + 1].array().square();
    grad.layers[i].W.noalias() += d * c.acts[i].transpose();
    grad.layers[i].b += d.rowwise().sum();
    Mat next = l.W.transpose() * d;
    d = std::move(next);
  }
  return d;
}

// Gaussian(0, scale^2) weights and biases, deterministic per seed.
inline Mlp init_mlp(const std::vector<Eigen::Index>& dims, const std::vector<Activation>& acts, std::uint64_t seed,
                    double scale) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1) throw Error("init_mlp: need one activation per layer");
  for (auto d : dims) {
    if (d <= 0) throw Error("init_mlp: dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Mlp m;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Layer l;
    l.W.resize(dims[i + 1], dims[i]);
    l.b.resize(dims[i + 1]);
    for (Eigen::Index k = 0; k < l.W.size(); ++k) l.W.data()[k] = scale * g(rng);
    for (Eigen::Index k = 0; k < l.b.size(); ++k) l.b[k] = scale * g(rng);
    l.act = acts[i];
    m.layers.push_back(std::move(l));
  }
  return m;
}

inline Mlp init_mlp(Eigen::Index in_dim, Eigen::Index hidden_dim, Eigen::Index out_dim, std::uint64_t seed,
                    double scale) {
  return init_mlp({in_dim, hidden_dim, out_dim}, {Activation::tanh, Activation::tanh}, seed, scale);
}

struct SoftmaxXent {
  double loss;
  Vec grad;  // d loss / d logits
};

inline Vec softmax(const Vec& logits) {
  const double mx = logits.maxCoeff();
  Vec e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

inline SoftmaxXent softmax_xent(const Vec& logits, std::size_t label) {
  if (label >= static_cast<std::size_t>(logits.size())) throw Error("softmax_xent: label out of range");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  Vec p = (logits.array() - lse).exp().matrix();
  SoftmaxXent out{lse - logits[static_cast<Eigen::Index>(label)], p};
  out.grad[static_cast<Eigen::Index>(label)] -= 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// A contiguous block of parameters (or of their gradients).
struct ParamRef {
  double* data;
  std::size_t size;
};

struct AdamState {
  AdamConfig cfg;
  std::vector<Eigen::ArrayXd> m, v;
  std::uint64_t step = 0;
};

inline AdamState adam_init(const std::vector<ParamRef>& params, AdamConfig cfg = {}) {
  AdamState s;
  s.cfg = cfg;
  for (const auto& p : params) {
    s.m.push_back(Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(p.size)));
    s.v.push_back(Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(p.size)));
  }
  return s;
}

// Standard Adam with bias correction; `grads[i]` matches `params[i]`.
inline void adam_step(AdamState& s, const std::vector<ParamRef>& params, const std::vector<ParamRef>& grads) {
  if (params.size() != grads.size() || params.size() != s.m.size()) throw Error("adam_step: parameter list mismatch");
  ++s.step;
  const double b1 = s.cfg.beta1, b2 = s.cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size != params[i].size || static_cast<std::size_t>(s.m[i].size()) != params[i].size) {
      throw Error("adam_step: gradient shape mismatch");
    }
    const auto n = static_cast<Eigen::Index>(params[i].size);
    Eigen::Map<const Eigen::ArrayXd> g(grads[i].data, n);
    Eigen::Map<Eigen::ArrayXd> w(params[i].data, n);
    s.m[i] = b1 * s.m[i] + (1 - b1) * g;
    s.v[i] = b2 * s.v[i] + (1 - b2) * g.square();
    w -= s.cfg.lr * (s.m[i] / c1) / ((s.v[i] / c2).sqrt() + s.cfg.eps);
  }
}

inline void append_param_refs(Mlp& m, std::vector<ParamRef>& out) {
  for (auto& l : m.layers) {
    out.push_back({l.W.data(), static_cast<std::size_t>(l.W.size())});
    out.push_back({l.b.data(), static_cast<std::size_t>(l.b.size())});
  }
}

// ---------------------------------------------------------------------------
// Finite-difference checking

struct BlockError {
  std::string name;
  double rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<BlockError> blocks;
  double max_rel_error = 0.0;
};

// A parameter block: pointer to its storage and the analytic gradient.
struct CheckBlock {
  std::string name;
  double* data;
  std::size_t size;
  const double* grad;
};

// Central differences against analytic gradients, per block. The relative
// error of a block is |a - n| / (|a| + |n|) over the checked entries (0 when
// both vanish). At most `max_entries` evenly spaced entries per block.
inline GradCheckReport gradient_check(const std::function<double()>& loss, const std::vector<CheckBlock>& blocks,
                                      double eps = 1e-6, std::size_t max_entries = 0) {
  GradCheckReport rep;
  for (const auto& b : blocks) {
    const std::size_t stride = (max_entries == 0 || b.size <= max_entries) ? 1 : (b.size + max_entries - 1) / max_entries;
    double diff2 = 0, a2 = 0, n2 = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < b.size; i += stride) {
      const double orig = b.data[i];
      b.data[i] = orig + eps;
      const double fp = loss();
      b.data[i] = orig - eps;
      const double fm = loss();
      b.data[i] = orig;
      const double num = (fp - fm) / (2 * eps);
      diff2 += (num - b.grad[i]) * (num - b.grad[i]);
      a2 += b.grad[i] * b.grad[i];
      n2 += num * num;
      ++count;
    }
    const double denom = std::sqrt(a2) + std::sqrt(n2);
    const double rel = denom == 0.0 ? 0.0 : std::sqrt(diff2) / denom;
    rep.blocks.push_back({b.name, rel, count});
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
  }
  return rep;
}

// Convenience view of a network's blocks for gradient_check.
inline void append_check_blocks(const std::string& name, Mlp& m, const Mlp& grad, std::vector<CheckBlock>& out) {
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& l = m.layers[i];
    const auto& g = grad.layers[i];
    out.push_back({name + ".W" + std::to_string(i), l.W.data(), static_cast<std::size_t>(l.W.size()), g.W.data()});
    out.push_back({name + ".b" + std::to_string(i), l.b.data(), static_cast<std::size_t>(l.b.size()), g.b.data()});
  }
}

// ---------------------------------------------------------------------------
// Optional per-feature input normalization (fit once, then fixed).

struct FeatureNormalizer {
  Vec mean, inv_std;

  static FeatureNormalizer fit(const Mat& samples, double min_std = 1e-6) {
    FeatureNormalizer f;
    f.mean = samples.rowwise().mean();
    const Mat centered = samples.colwise() - f.mean;
    Vec var = centered.cwiseAbs2().rowwise().mean();
    f.inv_std = var.cwiseSqrt().cwiseMax(min_std).cwiseInverse();
    return f;
  }
  Mat apply(const Mat& x) const { return (x.colwise() - mean).array().colwise() * inv_std.array(); }
  Mat invert(const Mat& y) const { return (y.array().colwise() / inv_std.array()).matrix().colwise() + mean; }
};

}  // namespace grains

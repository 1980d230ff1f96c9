#pragma once

// Sequential multi-layer perceptron with a layer-wise tape for reverse-mode
// differentiation. Each layer is: affine -> optional batch norm -> activation.
// Forward passes are pure; batch-norm running statistics are committed
// separately so that repeated evaluation (finite differences, replays) never
// perturbs the model.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "iosda/errors.hpp"
#include "iosda/matrix.hpp"

namespace iosda {

using Rng = std::mt19937_64;

struct Activation {
  enum class Kind { leaky_relu, linear };
  Kind kind = Kind::leaky_relu;
  double slope = 0.01;

  static Activation leaky(double slope = 0.01) { return {Kind::leaky_relu, slope}; }
  static Activation linear() { return {Kind::linear, 0.0}; }

  [[nodiscard]] double apply(double x) const noexcept {
    return (kind == Kind::linear || x > 0.0) ? x : slope * x;
  }
  [[nodiscard]] double derivative(double x) const noexcept {
    return (kind == Kind::linear || x > 0.0) ? 1.0 : slope;
  }
  friend bool operator==(const Activation&, const Activation&) = default;
};

struct MlpSpec {
  std::vector<std::size_t> layer_dims;  // input width first, output width last
  Activation activation = Activation::leaky();
  std::vector<bool> batch_norm;  // one flag per layer; empty means none
  bool activate_output = false;  // last layer is linear unless set

  [[nodiscard]] std::size_t num_layers() const noexcept {
    return layer_dims.empty() ? 0 : layer_dims.size() - 1;
  }
  [[nodiscard]] std::size_t input_dim() const { return layer_dims.front(); }
  [[nodiscard]] std::size_t output_dim() const { return layer_dims.back(); }
  [[nodiscard]] bool has_bn(std::size_t layer) const {
    return layer < batch_norm.size() && batch_norm[layer];
  }
  [[nodiscard]] Activation layer_activation(std::size_t layer) const {
    return (layer + 1 < num_layers() || activate_output) ? activation : Activation::linear();
  }

  void validate() const {
    if (layer_dims.size() < 2) throw DimensionError("MlpSpec: need at least two layer dims");
    for (auto d : layer_dims)
      if (d == 0) throw DimensionError("MlpSpec: zero-width layer");
    if (activation.kind == Activation::Kind::leaky_relu &&
        !(activation.slope > 0.0 && activation.slope < 1.0))
      throw DimensionError("MlpSpec: leaky-relu slope must lie in (0,1)");
    if (!batch_norm.empty() && batch_norm.size() != num_layers())
      throw DimensionError("MlpSpec: batch_norm flags must match layer count");
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct LayerParams {
  RealMatrix weight;  // in x out
  RealMatrix bias;    // 1 x out
  // Present only on batch-normalized layers (1 x out each).
  RealMatrix bn_gamma;
  RealMatrix bn_beta;
  RealMatrix bn_mean;
  RealMatrix bn_var;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct ParamSet {
  std::vector<LayerParams> layers;

  /// Same shapes as `like`, all zeros.
  static ParamSet zeros_like(const ParamSet& like) {
    ParamSet out;
    out.layers.reserve(like.layers.size());
    for (const auto& l : like.layers) {
      LayerParams z;
      z.weight = RealMatrix(l.weight.rows(), l.weight.cols());
      z.bias = RealMatrix(l.bias.rows(), l.bias.cols());
      z.bn_gamma = RealMatrix(l.bn_gamma.rows(), l.bn_gamma.cols());
      z.bn_beta = RealMatrix(l.bn_beta.rows(), l.bn_beta.cols());
      z.bn_mean = RealMatrix(l.bn_mean.rows(), l.bn_mean.cols());
      z.bn_var = RealMatrix(l.bn_var.rows(), l.bn_var.cols());
      out.layers.push_back(std::move(z));
    }
    return out;
  }

  /// Visits every trainable tensor (weights, biases, bn scale/shift).
  template <class F>
  void for_each_trainable(F&& f) {
    for (auto& l : layers) {
      f(l.weight);
      f(l.bias);
      if (!l.bn_gamma.empty()) {
        f(l.bn_gamma);
        f(l.bn_beta);
      }
    }
  }
  template <class F>
  void for_each_trainable(F&& f) const {
    for (const auto& l : layers) {
      f(l.weight);
      f(l.bias);
      if (!l.bn_gamma.empty()) {
        f(l.bn_gamma);
        f(l.bn_beta);
      }
    }
  }

  /// Visits every tensor with a stable name, running statistics included.
  template <class F>
  void for_each_named(F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      const std::string p = "L" + std::to_string(i) + ".";
      f(p + "weight", l.weight);
      f(p + "bias", l.bias);
      if (!l.bn_gamma.empty()) {
        f(p + "bn_gamma", l.bn_gamma);
        f(p + "bn_beta", l.bn_beta);
        f(p + "bn_mean", l.bn_mean);
        f(p + "bn_var", l.bn_var);
      }
    }
  }
  template <class F>
  void for_each_named(F&& f) const {
    const_cast<ParamSet*>(this)->for_each_named(
        [&](const std::string& n, RealMatrix& m) { f(n, static_cast<const RealMatrix&>(m)); });
  }

  [[nodiscard]] std::size_t trainable_count() const {
    std::size_t n = 0;
    for_each_trainable([&](const RealMatrix& m) { n += m.size(); });
    return n;
  }

  ParamSet& operator+=(const ParamSet& o) {
    if (o.layers.size() != layers.size()) throw DimensionError("ParamSet +=: layer count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weight += o.layers[i].weight;
      layers[i].bias += o.layers[i].bias;
      if (!layers[i].bn_gamma.empty()) {
        layers[i].bn_gamma += o.layers[i].bn_gamma;
        layers[i].bn_beta += o.layers[i].bn_beta;
      }
    }
    return *this;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEps = 1e-5;

/// Glorot-uniform weights, zero biases, identity batch norm.
inline ParamSet init_params(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  ParamSet ps;
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    const std::size_t in = spec.layer_dims[i];
    const std::size_t out = spec.layer_dims[i + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    LayerParams l;
    l.weight = RealMatrix(in, out);
    for (double& w : l.weight.data()) w = dist(rng);
    l.bias = RealMatrix(1, out);
    if (spec.has_bn(i)) {
      l.bn_gamma = RealMatrix(1, out, 1.0);
      l.bn_beta = RealMatrix(1, out);
      l.bn_mean = RealMatrix(1, out);
      l.bn_var = RealMatrix(1, out, 1.0);
    }
    ps.layers.push_back(std::move(l));
  }
  return ps;
}

/// Throws DimensionError unless `params` has the shapes `spec` implies.
inline void check_params(const MlpSpec& spec, const ParamSet& params) {
  spec.validate();
  if (params.layers.size() != spec.num_layers())
    throw DimensionError("ParamSet: expected " + std::to_string(spec.num_layers()) + " layers, got " +
                         std::to_string(params.layers.size()));
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    const auto& l = params.layers[i];
    const std::size_t in = spec.layer_dims[i];
    const std::size_t out = spec.layer_dims[i + 1];
    if (l.weight.rows() != in || l.weight.cols() != out || l.bias.rows() != 1 || l.bias.cols() != out)
      throw DimensionError("ParamSet: layer " + std::to_string(i) + " shape mismatch");
    if (spec.has_bn(i) != !l.bn_gamma.empty())
      throw DimensionError("ParamSet: layer " + std::to_string(i) + " batch-norm presence mismatch");
  }
}

enum class Mode { train, eval };

struct LayerTape {
  RealMatrix input;
  RealMatrix xhat;             // normalized pre-activation (bn layers)
  std::vector<double> inv_std;  // per-feature 1/sqrt(var+eps) used in the pass
  std::vector<double> batch_mean;
  std::vector<double> batch_var;  // biased, as used for normalization
  RealMatrix pre_act;           // value fed to the activation
};

struct Tape {
  Mode mode = Mode::train;
  std::vector<LayerTape> layers;
  std::size_t output_rows = 0;
  std::size_t output_cols = 0;
};

struct ForwardResult {
  RealMatrix output;
  Tape tape;
};

inline ForwardResult forward(const MlpSpec& spec, const ParamSet& params, const RealMatrix& input,
                             Mode mode) {
  check_params(spec, params);
  if (input.cols() != spec.input_dim())
    throw DimensionError("forward: input has " + std::to_string(input.cols()) + " cols, spec expects " +
                         std::to_string(spec.input_dim()));
  ForwardResult res;
  res.tape.mode = mode;
  res.tape.layers.resize(spec.num_layers());
  RealMatrix x = input;
  const std::size_t n = input.rows();
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    const auto& lp = params.layers[i];
    auto& lt = res.tape.layers[i];
    RealMatrix z = matmul(x, lp.weight);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < z.cols(); ++c) z(r, c) += lp.bias(0, c);
    lt.input = std::move(x);

    if (spec.has_bn(i)) {
      const std::size_t d = z.cols();
      lt.inv_std.assign(d, 0.0);
      lt.batch_mean.assign(d, 0.0);
      lt.batch_var.assign(d, 0.0);
      lt.xhat = RealMatrix(n, d);
      for (std::size_t c = 0; c < d; ++c) {
        double mean, var;
        if (mode == Mode::train) {
          mean = 0.0;
          for (std::size_t r = 0; r < n; ++r) mean += z(r, c);
          mean = n ? mean / static_cast<double>(n) : 0.0;
          var = 0.0;
          for (std::size_t r = 0; r < n; ++r) var += (z(r, c) - mean) * (z(r, c) - mean);
          var = n ? var / static_cast<double>(n) : 0.0;
        } else {
          mean = lp.bn_mean(0, c);
          var = lp.bn_var(0, c);
        }
        lt.batch_mean[c] = mean;
        lt.batch_var[c] = var;
        const double is = 1.0 / std::sqrt(var + kBatchNormEps);
        lt.inv_std[c] = is;
        for (std::size_t r = 0; r < n; ++r) {
          const double xh = (z(r, c) - mean) * is;
          lt.xhat(r, c) = xh;
          z(r, c) = lp.bn_gamma(0, c) * xh + lp.bn_beta(0, c);
        }
      }
    }
    const Activation act = spec.layer_activation(i);
    RealMatrix y = z;
    if (act.kind != Activation::Kind::linear)
      for (double& v : y.data()) v = act.apply(v);
    lt.pre_act = std::move(z);
    x = std::move(y);
  }
  res.tape.output_rows = x.rows();
  res.tape.output_cols = x.cols();
  if (!x.all_finite()) throw NumericError("forward: non-finite activations");
  res.output = std::move(x);
  return res;
}

/// Folds the batch statistics recorded in a train-mode tape into the running
/// averages of every batch-normalized layer.
inline void commit_batch_stats(const MlpSpec& spec, ParamSet& params, const Tape& tape) {
  if (tape.mode != Mode::train) return;
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    if (!spec.has_bn(i)) continue;
    auto& lp = params.layers[i];
    const auto& lt = tape.layers[i];
    const double n = static_cast<double>(lt.input.rows());
    if (n < 1) continue;
    const double unbias = n > 1 ? n / (n - 1.0) : 1.0;
    for (std::size_t c = 0; c < lp.bn_mean.cols(); ++c) {
      lp.bn_mean(0, c) = kBatchNormMomentum * lp.bn_mean(0, c) + (1.0 - kBatchNormMomentum) * lt.batch_mean[c];
      lp.bn_var(0, c) =
          kBatchNormMomentum * lp.bn_var(0, c) + (1.0 - kBatchNormMomentum) * lt.batch_var[c] * unbias;
    }
  }
}

struct BackwardResult {
  ParamSet grads;
  RealMatrix input_grad;
};

/// Gradients of <upstream, output> w.r.t. parameters and input. The input
/// gradient is skipped (left empty) when `need_input_grad` is false.
inline BackwardResult backward(const MlpSpec& spec, const ParamSet& params, const Tape& tape,
                               const RealMatrix& upstream, bool need_input_grad = true) {
  if (tape.layers.size() != spec.num_layers())
    throw DimensionError("backward: tape does not match spec");
  if (upstream.rows() != tape.output_rows || upstream.cols() != tape.output_cols)
    throw DimensionError("backward: upstream " + upstream.shape_str() + " vs output " +
                         std::to_string(tape.output_rows) + "x" + std::to_string(tape.output_cols));
  BackwardResult res;
  res.grads = ParamSet::zeros_like(params);
  RealMatrix g = upstream;
  for (std::size_t ii = spec.num_layers(); ii-- > 0;) {
    const auto& lp = params.layers[ii];
    const auto& lt = tape.layers[ii];
    auto& gl = res.grads.layers[ii];
    const Activation act = spec.layer_activation(ii);
    if (act.kind != Activation::Kind::linear)
      for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] *= act.derivative(lt.pre_act.data()[k]);

    if (spec.has_bn(ii)) {
      const std::size_t n = g.rows();
      const std::size_t d = g.cols();
      const double nd = static_cast<double>(n);
      for (std::size_t c = 0; c < d; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          sum_dy += g(r, c);
          sum_dy_xhat += g(r, c) * lt.xhat(r, c);
        }
        gl.bn_gamma(0, c) = sum_dy_xhat;
        gl.bn_beta(0, c) = sum_dy;
        const double gamma = lp.bn_gamma(0, c);
        const double is = lt.inv_std[c];
        if (tape.mode == Mode::train) {
          // dz = (gamma * inv_std / N) * (N dy - sum(dy) - xhat * sum(dy xhat))
          for (std::size_t r = 0; r < n; ++r)
            g(r, c) = gamma * is / nd * (nd * g(r, c) - sum_dy - lt.xhat(r, c) * sum_dy_xhat);
        } else {
          for (std::size_t r = 0; r < n; ++r) g(r, c) *= gamma * is;
        }
      }
    }
    gl.weight = matmul_tn(lt.input, g);
    gl.bias = column_sums(g);
    if (ii > 0 || need_input_grad) g = matmul_nt(g, lp.weight);
    else g = RealMatrix();
  }
  res.input_grad = std::move(g);
  return res;
}

/// Backward hook of a gradient-reversal node: the forward pass is identity,
/// the gradient is negated and scaled by lambda.
inline RealMatrix grad_reverse(const RealMatrix& input_grad, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("grad_reverse: lambda must be >= 0");
  RealMatrix out = input_grad;
  for (double& v : out.data()) v = (v == 0.0 || lambda == 0.0) ? 0.0 : -lambda * v;
  return out;
}

/// Row-wise softmax with max subtraction.
inline RealMatrix softmax_rows(const RealMatrix& logits) {
  RealMatrix p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto out = p.row(r);
    double mx = in.empty() ? 0.0 : in[0];
    for (double v : in) mx = std::max(mx, v);
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      out[c] = std::exp(in[c] - mx);
      sum += out[c];
    }
    for (double& v : out) v /= sum;
  }
  return p;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double epsilon = 1e-8;
};

struct AdamState {
  std::uint64_t step_count = 0;
  ParamSet m;
  ParamSet v;
  AdamConfig config;

  static AdamState for_params(const ParamSet& params, AdamConfig cfg = {}) {
    return {0, ParamSet::zeros_like(params), ParamSet::zeros_like(params), cfg};
  }
  friend bool operator==(const AdamState& a, const AdamState& b) {
    return a.step_count == b.step_count && a.m == b.m && a.v == b.v &&
           a.config.learning_rate == b.config.learning_rate && a.config.beta1 == b.config.beta1 &&
           a.config.beta2 == b.config.beta2 && a.config.epsilon == b.config.epsilon;
  }
};

/// One bias-corrected Adam update over every trainable tensor.
inline void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state) {
  std::vector<RealMatrix*> p, m, v;
  std::vector<const RealMatrix*> g;
  params.for_each_trainable([&](RealMatrix& t) { p.push_back(&t); });
  state.m.for_each_trainable([&](RealMatrix& t) { m.push_back(&t); });
  state.v.for_each_trainable([&](RealMatrix& t) { v.push_back(&t); });
  grads.for_each_trainable([&](const RealMatrix& t) { g.push_back(&t); });
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
    throw DimensionError("adam_step: tensor count mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i]->require_same_shape(*g[i], "adam_step grads");
    p[i]->require_same_shape(*m[i], "adam_step moments");
  }

  ++state.step_count;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& pd = p[i]->data();
    auto& md = m[i]->data();
    auto& vd = v[i]->data();
    const auto& gd = g[i]->data();
    for (std::size_t k = 0; k < pd.size(); ++k) {
      md[k] = c.beta1 * md[k] + (1.0 - c.beta1) * gd[k];
      vd[k] = c.beta2 * vd[k] + (1.0 - c.beta2) * gd[k] * gd[k];
      const double mhat = md[k] / bc1;
      const double vhat = vd[k] / bc2;
      pd[k] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

/// A network: spec + parameters + optimizer state.
struct Mlp {
  MlpSpec spec;
  ParamSet params;
  AdamState optimizer;

  static Mlp create(MlpSpec spec, Rng& rng, AdamConfig adam = {}) {
    ParamSet p = init_params(spec, rng);
    AdamState st = AdamState::for_params(p, adam);
    return {std::move(spec), std::move(p), std::move(st)};
  }

  [[nodiscard]] ForwardResult run(const RealMatrix& x, Mode mode) const {
    return forward(spec, params, x, mode);
  }
  [[nodiscard]] RealMatrix infer(const RealMatrix& x) const { return forward(spec, params, x, Mode::eval).output; }
  [[nodiscard]] BackwardResult back(const Tape& tape, const RealMatrix& upstream, bool need_input_grad = true) const {
    return backward(spec, params, tape, upstream, need_input_grad);
  }
  void apply(const ParamSet& grads, const Tape& tape) {
    adam_step(params, grads, optimizer);
    commit_batch_stats(spec, params, tape);
  }
};

}  // namespace iosda

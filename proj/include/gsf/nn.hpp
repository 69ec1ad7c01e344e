#pragma once

// Small dense network with hand-written reverse mode: affine layers,
// optional batch normalization, ReLU, and an Adagrad optimizer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gsf/error.hpp"
#include "gsf/matrix.hpp"
#include "gsf/rng.hpp"

namespace gsf::nn {

/// ReLU; the subgradient at 0 is taken to be 0.
inline double relu(double t) noexcept { return t > 0.0 ? t : 0.0; }

struct AffineLayer {
  Matrix weights;  // in_dim x out_dim
  std::vector<double> bias;

  std::size_t in_dim() const noexcept { return weights.rows(); }
  std::size_t out_dim() const noexcept { return weights.cols(); }
};

struct BatchNormLayer {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  // Decay of the running statistics: running <- momentum * running + (1 - momentum) * batch.
  double momentum = 0.99;
  double epsilon = 1e-5;

  explicit BatchNormLayer(std::size_t dim = 0, double momentum_ = 0.99, double epsilon_ = 1e-5)
      : gamma(dim, 1.0),
        beta(dim, 0.0),
        running_mean(dim, 0.0),
        running_var(dim, 1.0),
        momentum(momentum_),
        epsilon(epsilon_) {}

  std::size_t dim() const noexcept { return gamma.size(); }
};

/// affine -> [batch norm] -> [relu]
struct HiddenLayer {
  AffineLayer affine;
  std::optional<BatchNormLayer> norm;
  bool relu = true;
};

/// Hidden stack followed by a linear output head.
struct ScoringNet {
  std::vector<HiddenLayer> hidden;
  AffineLayer head;

  std::size_t input_dim() const noexcept {
    return hidden.empty() ? head.in_dim() : hidden.front().affine.in_dim();
  }
  std::size_t output_dim() const noexcept { return head.out_dim(); }
  bool has_batch_norm() const noexcept {
    return std::any_of(hidden.begin(), hidden.end(), [](const HiddenLayer& l) { return l.norm.has_value(); });
  }
};

enum class Mode { train, infer };

struct LayerCache {
  Matrix input;
  Matrix pre_activation;  // input to the ReLU (after batch norm when present)
  Matrix normalized;      // x-hat, batch norm only
  std::vector<double> batch_mean;
  std::vector<double> batch_var;
};

struct ForwardCache {
  Mode mode = Mode::infer;
  std::vector<LayerCache> layers;
  Matrix head_input;
};

struct ForwardResult {
  Matrix outputs;
  ForwardCache cache;
};

struct AffineGrad {
  Matrix weights;
  std::vector<double> bias;
};

struct BatchNormGrad {
  std::vector<double> gamma;
  std::vector<double> beta;
};

struct HiddenGrad {
  AffineGrad affine;
  std::optional<BatchNormGrad> norm;
};

/// Same shape tree as the trainable parameters of a ScoringNet.
struct Gradients {
  std::vector<HiddenGrad> hidden;
  AffineGrad head;
};

struct BackwardResult {
  Gradients grads;
  Matrix input_grad;
};

struct AdagradState {
  Gradients accumulators;
  double initial_accumulator = 0.1;
};

namespace detail {

inline void check_finite(const Matrix& m, std::size_t layer, const char* where) {
  if (!m.all_finite()) {
    throw NumericError(std::string("non-finite ") + where + " at layer " + std::to_string(layer));
  }
}

// out = in * W + b, row by row; each output row depends only on its input row.
inline Matrix affine_forward(const AffineLayer& layer, const Matrix& in) {
  Matrix out(in.rows(), layer.out_dim());
  const std::size_t n_in = layer.in_dim();
  const std::size_t n_out = layer.out_dim();
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto o = out.row(r);
    std::copy(layer.bias.begin(), layer.bias.end(), o.begin());
    auto x = in.row(r);
    for (std::size_t i = 0; i < n_in; ++i) {
      const double a = x[i];
      if (a == 0.0) continue;
      auto w = layer.weights.row(i);
      for (std::size_t j = 0; j < n_out; ++j) o[j] += a * w[j];
    }
  }
  return out;
}

inline Matrix affine_backward(const AffineLayer& layer, const Matrix& in, const Matrix& dout,
                              AffineGrad& grad) {
  const std::size_t n_in = layer.in_dim();
  const std::size_t n_out = layer.out_dim();
  grad.weights = Matrix(n_in, n_out);
  grad.bias.assign(n_out, 0.0);
  Matrix din(in.rows(), n_in);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto x = in.row(r);
    auto d = dout.row(r);
    auto dx = din.row(r);
    for (std::size_t j = 0; j < n_out; ++j) grad.bias[j] += d[j];
    for (std::size_t i = 0; i < n_in; ++i) {
      auto w = layer.weights.row(i);
      auto gw = grad.weights.row(i);
      double acc = 0.0;
      for (std::size_t j = 0; j < n_out; ++j) {
        gw[j] += x[i] * d[j];
        acc += w[j] * d[j];
      }
      dx[i] = acc;
    }
  }
  return din;
}

}  // namespace detail

/// Evaluates the net on a batch (one row per example). Train mode normalizes
/// with batch statistics and fills the cache for backward(); infer mode uses
/// running statistics, so each output row depends only on its input row.
inline ForwardResult forward(const ScoringNet& net, const Matrix& input, Mode mode) {
  if (input.cols() != net.input_dim()) {
    throw DimensionError("forward: input has " + std::to_string(input.cols()) +
                         " columns, net expects " + std::to_string(net.input_dim()));
  }
  if (mode == Mode::train && net.has_batch_norm() && input.rows() < 2) {
    throw InvalidArgument("forward: batch norm in train mode needs a batch of at least 2 rows");
  }
  ForwardResult result;
  result.cache.mode = mode;
  result.cache.layers.reserve(net.hidden.size());
  Matrix x = input;
  for (std::size_t k = 0; k < net.hidden.size(); ++k) {
    const HiddenLayer& layer = net.hidden[k];
    LayerCache lc;
    Matrix z = detail::affine_forward(layer.affine, x);
    if (layer.norm) {
      const BatchNormLayer& bn = *layer.norm;
      const std::size_t d = bn.dim();
      const std::size_t n = z.rows();
      std::vector<double> mean(d, 0.0), var(d, 0.0);
      if (mode == Mode::train) {
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < d; ++j) mean[j] += z(r, j);
        }
        for (double& m : mean) m /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < d; ++j) {
            const double c = z(r, j) - mean[j];
            var[j] += c * c;
          }
        }
        for (double& v : var) v /= static_cast<double>(n);
      } else {
        mean = bn.running_mean;
        var = bn.running_var;
      }
      Matrix xhat(n, d);
      Matrix y(n, d);
      for (std::size_t j = 0; j < d; ++j) {
        const double inv_std = 1.0 / std::sqrt(var[j] + bn.epsilon);
        for (std::size_t r = 0; r < n; ++r) {
          xhat(r, j) = (z(r, j) - mean[j]) * inv_std;
          y(r, j) = bn.gamma[j] * xhat(r, j) + bn.beta[j];
        }
      }
      lc.normalized = std::move(xhat);
      lc.batch_mean = std::move(mean);
      lc.batch_var = std::move(var);
      z = std::move(y);
    }
    detail::check_finite(z, k, "pre-activation");
    Matrix a = z;
    if (layer.relu) {
      for (double& v : a.values()) v = relu(v);
    }
    lc.input = std::move(x);
    lc.pre_activation = std::move(z);
    result.cache.layers.push_back(std::move(lc));
    x = std::move(a);
  }
  result.outputs = detail::affine_forward(net.head, x);
  detail::check_finite(result.outputs, net.hidden.size(), "output");
  result.cache.head_input = std::move(x);
  return result;
}

/// Inference-mode outputs only.
inline Matrix infer(const ScoringNet& net, const Matrix& input) {
  return forward(net, input, Mode::infer).outputs;
}

/// Exact gradients of a scalar loss L given dL/d(outputs).
inline BackwardResult backward(const ScoringNet& net, const ForwardCache& cache, const Matrix& output_grad) {
  if (cache.mode != Mode::train) throw InvalidArgument("backward: cache was not produced in train mode");
  if (cache.layers.size() != net.hidden.size() || cache.head_input.cols() != net.head.in_dim()) {
    throw DimensionError("backward: cache does not match net");
  }
  if (output_grad.rows() != cache.head_input.rows() || output_grad.cols() != net.output_dim()) {
    throw DimensionError("backward: output gradient shape mismatch");
  }
  BackwardResult result;
  result.grads.hidden.resize(net.hidden.size());
  Matrix d = detail::affine_backward(net.head, cache.head_input, output_grad, result.grads.head);
  for (std::size_t k = net.hidden.size(); k-- > 0;) {
    const HiddenLayer& layer = net.hidden[k];
    const LayerCache& lc = cache.layers[k];
    if (layer.relu) {
      auto pre = lc.pre_activation.values();
      auto dv = d.values();
      for (std::size_t i = 0; i < dv.size(); ++i) {
        if (!(pre[i] > 0.0)) dv[i] = 0.0;
      }
    }
    if (layer.norm) {
      const BatchNormLayer& bn = *layer.norm;
      const std::size_t n = d.rows();
      const std::size_t dim = bn.dim();
      BatchNormGrad g{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
      Matrix dz(n, dim);
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t j = 0; j < dim; ++j) {
        const double inv_std = 1.0 / std::sqrt(lc.batch_var[j] + bn.epsilon);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          g.beta[j] += d(r, j);
          g.gamma[j] += d(r, j) * lc.normalized(r, j);
          const double dxhat = d(r, j) * bn.gamma[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * lc.normalized(r, j);
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double dxhat = d(r, j) * bn.gamma[j];
          dz(r, j) = inv_std * inv_n *
                     (static_cast<double>(n) * dxhat - sum_dxhat - lc.normalized(r, j) * sum_dxhat_xhat);
        }
      }
      result.grads.hidden[k].norm = std::move(g);
      d = std::move(dz);
    }
    d = detail::affine_backward(layer.affine, lc.input, d, result.grads.hidden[k].affine);
  }
  result.input_grad = std::move(d);
  return result;
}

/// Folds the batch statistics recorded in a train-mode cache into the running statistics.
inline void update_running_stats(ScoringNet& net, const ForwardCache& cache) {
  if (cache.mode != Mode::train || cache.layers.size() != net.hidden.size()) {
    throw InvalidArgument("update_running_stats: need a train-mode cache for this net");
  }
  for (std::size_t k = 0; k < net.hidden.size(); ++k) {
    if (!net.hidden[k].norm) continue;
    BatchNormLayer& bn = *net.hidden[k].norm;
    const LayerCache& lc = cache.layers[k];
    for (std::size_t j = 0; j < bn.dim(); ++j) {
      bn.running_mean[j] = bn.momentum * bn.running_mean[j] + (1.0 - bn.momentum) * lc.batch_mean[j];
      bn.running_var[j] = bn.momentum * bn.running_var[j] + (1.0 - bn.momentum) * lc.batch_var[j];
    }
  }
}

/// Flat views over the trainable parameters, in a fixed canonical order.
inline std::vector<std::span<double>> parameter_views(ScoringNet& net) {
  std::vector<std::span<double>> out;
  for (HiddenLayer& l : net.hidden) {
    out.push_back(l.affine.weights.values());
    out.push_back(l.affine.bias);
    if (l.norm) {
      out.push_back(l.norm->gamma);
      out.push_back(l.norm->beta);
    }
  }
  out.push_back(net.head.weights.values());
  out.push_back(net.head.bias);
  return out;
}

/// Same order as parameter_views(ScoringNet&).
inline std::vector<std::span<double>> parameter_views(Gradients& g) {
  std::vector<std::span<double>> out;
  for (HiddenGrad& l : g.hidden) {
    out.push_back(l.affine.weights.values());
    out.push_back(l.affine.bias);
    if (l.norm) {
      out.push_back(l.norm->gamma);
      out.push_back(l.norm->beta);
    }
  }
  out.push_back(g.head.weights.values());
  out.push_back(g.head.bias);
  return out;
}

inline std::vector<std::span<const double>> parameter_views(const Gradients& g) {
  auto views = parameter_views(const_cast<Gradients&>(g));
  return {views.begin(), views.end()};
}

/// Gradient tree of the net's shape filled with `value`.
inline Gradients gradients_like(const ScoringNet& net, double value = 0.0) {
  auto fill = [value](const AffineLayer& a) {
    return AffineGrad{Matrix(a.in_dim(), a.out_dim(), value), std::vector<double>(a.out_dim(), value)};
  };
  Gradients g;
  for (const HiddenLayer& l : net.hidden) {
    HiddenGrad h{fill(l.affine), std::nullopt};
    if (l.norm) h.norm = BatchNormGrad{std::vector<double>(l.norm->dim(), value), std::vector<double>(l.norm->dim(), value)};
    g.hidden.push_back(std::move(h));
  }
  g.head = fill(net.head);
  return g;
}

inline double global_norm(const Gradients& g) {
  double s = 0.0;
  for (auto v : parameter_views(g)) {
    for (double x : v) s += x * x;
  }
  return std::sqrt(s);
}

inline void scale(Gradients& g, double factor) {
  for (auto v : parameter_views(g)) {
    for (double& x : v) x *= factor;
  }
}

inline AdagradState make_adagrad_state(const ScoringNet& net, double initial_accumulator = 0.1) {
  if (initial_accumulator < 0.0) throw InvalidArgument("adagrad: initial accumulator must be >= 0");
  return {gradients_like(net, initial_accumulator), initial_accumulator};
}

/// acc += g^2; p -= lr * g / sqrt(acc), per parameter.
inline void adagrad_step(ScoringNet& net, const Gradients& grads, AdagradState& state, double learning_rate) {
  if (!(learning_rate > 0.0)) throw InvalidArgument("adagrad: learning rate must be positive");
  auto params = parameter_views(net);
  auto gs = parameter_views(grads);
  auto accs = parameter_views(state.accumulators);
  if (params.size() != gs.size() || params.size() != accs.size()) {
    throw DimensionError("adagrad: parameter tree shape mismatch");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != gs[t].size() || params[t].size() != accs[t].size()) {
      throw DimensionError("adagrad: tensor " + std::to_string(t) + " shape mismatch");
    }
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double g = gs[t][i];
      if (g == 0.0) continue;
      accs[t][i] += g * g;
      params[t][i] -= learning_rate * g / std::sqrt(accs[t][i]);
    }
  }
}

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero bias.
inline AffineLayer init_glorot(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
  if (in_dim == 0 || out_dim == 0) throw InvalidArgument("init_glorot: zero dimension");
  const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  AffineLayer layer{Matrix(in_dim, out_dim), std::vector<double>(out_dim, 0.0)};
  for (double& w : layer.weights.values()) w = rng.uniform(-limit, limit);
  return layer;
}

inline AffineLayer init_glorot(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
  Rng rng(seed);
  return init_glorot(in_dim, out_dim, rng);
}

struct NetShape {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 1;
  bool batch_norm = true;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-5;
};

/// Glorot-initialized net; each layer draws from its own named stream.
inline ScoringNet build_net(const NetShape& shape, const Rng& rng) {
  ScoringNet net;
  std::size_t in = shape.input_dim;
  for (std::size_t k = 0; k < shape.hidden_dims.size(); ++k) {
    Rng layer_rng = rng.split("hidden", k);
    HiddenLayer layer{init_glorot(in, shape.hidden_dims[k], layer_rng), std::nullopt, true};
    if (shape.batch_norm) layer.norm = BatchNormLayer(shape.hidden_dims[k], shape.bn_momentum, shape.bn_epsilon);
    net.hidden.push_back(std::move(layer));
    in = shape.hidden_dims[k];
  }
  Rng head_rng = rng.split("head");
  net.head = init_glorot(in, shape.output_dim, head_rng);
  return net;
}

}  // namespace gsf::nn

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lhdff/ops.hpp"
#include "lhdff/rng.hpp"
#include "lhdff/tensor.hpp"

namespace lhdff {

template <class S>
TensorT<S> rand_uniform(Shape shape, double lo, double hi, RngStream& rng) {
  size_t n = numel(shape);
  std::vector<S> data(n);
  for (size_t i = 0; i < n; ++i) data[i] = static_cast<S>(rng.uniform(lo, hi));
  return TensorT<S>(std::move(shape), std::move(data));
}

template <class S>
TensorT<S> rand_normal(Shape shape, double mean, double stddev, RngStream& rng) {
  size_t n = numel(shape);
  std::vector<S> data(n);
  for (size_t i = 0; i < n; ++i) data[i] = static_cast<S>(mean + stddev * rng.normal());
  return TensorT<S>(std::move(shape), std::move(data));
}

// Ordered store of named parameters and buffers. Registration order is the
// serialization order, so checkpoints are reproducible across runs.
template <class S>
struct ParamRegistry {
  std::vector<std::pair<std::string, TensorT<S>>> params;
  std::vector<std::pair<std::string, TensorT<S>>> buffers;

  TensorT<S> add_param(const std::string& name, TensorT<S> t) {
    t.set_requires_grad(true);
    params.emplace_back(name, t);
    return t;
  }

  TensorT<S> add_buffer(const std::string& name, TensorT<S> t) {
    buffers.emplace_back(name, t);
    return t;
  }

  TensorT<S>* find_param(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return &t;
    return nullptr;
  }

  TensorT<S>* find_buffer(const std::string& name) {
    for (auto& [n, t] : buffers)
      if (n == name) return &t;
    return nullptr;
  }

  void zero_grads() {
    for (auto& [n, t] : params) t.zero_grad();
  }
};

template <class S>
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(size_t din, size_t dout, RngStream& rng, ParamRegistry<S>& reg,
              const std::string& prefix) {
    double bound = std::sqrt(6.0 / static_cast<double>(din));
    weight = reg.add_param(prefix + ".weight", rand_uniform<S>({dout, din}, -bound, bound, rng));
    bias = reg.add_param(prefix + ".bias", TensorT<S>::zeros({dout}));
  }

  TensorT<S> forward(const TensorT<S>& x) const { return linear(x, weight, bias); }

  TensorT<S> weight, bias;
};

template <class S>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(size_t cin, size_t cout, RngStream& rng, ParamRegistry<S>& reg,
              const std::string& prefix) {
    double bound = std::sqrt(6.0 / static_cast<double>(cin * 9));
    weight =
        reg.add_param(prefix + ".weight", rand_uniform<S>({cout, cin, 3, 3}, -bound, bound, rng));
    bias = reg.add_param(prefix + ".bias", TensorT<S>::zeros({cout}));
  }

  TensorT<S> forward(const TensorT<S>& x) const { return conv2d(x, weight, bias); }

  TensorT<S> weight, bias;
};

template <class S>
class BatchNorm2dLayer {
 public:
  BatchNorm2dLayer() = default;
  BatchNorm2dLayer(size_t channels, ParamRegistry<S>& reg, const std::string& prefix) {
    gamma = reg.add_param(prefix + ".gamma", TensorT<S>::full({channels}, S(1)));
    beta = reg.add_param(prefix + ".beta", TensorT<S>::zeros({channels}));
    running_mean = reg.add_buffer(prefix + ".running_mean", TensorT<S>::zeros({channels}));
    running_var = reg.add_buffer(prefix + ".running_var", TensorT<S>::full({channels}, S(1)));
  }

  TensorT<S> forward(const TensorT<S>& x, bool training) {
    return batch_norm2d(x, gamma, beta, running_mean, running_var, momentum, eps, training);
  }

  S momentum = S(0.1);
  S eps = S(1e-5);
  TensorT<S> gamma, beta, running_mean, running_var;
};

template <class S>
class LayerNormLayer {
 public:
  LayerNormLayer() = default;
  LayerNormLayer(size_t d, ParamRegistry<S>& reg, const std::string& prefix) {
    gamma = reg.add_param(prefix + ".gamma", TensorT<S>::full({d}, S(1)));
    beta = reg.add_param(prefix + ".beta", TensorT<S>::zeros({d}));
  }

  TensorT<S> forward(const TensorT<S>& x) const { return layer_norm(x, gamma, beta); }

  TensorT<S> gamma, beta;
};

// Scaled dot-product attention with per-head splitting and an output
// projection. Width must divide evenly across heads.
template <class S>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(size_t width, size_t heads, RngStream& rng, ParamRegistry<S>& reg,
                     const std::string& prefix)
      : width_(width), heads_(heads) {
    require<ConfigError>(heads >= 1 && width % heads == 0,
                         "attention width " + std::to_string(width) + " not divisible by " +
                             std::to_string(heads) + " heads");
    wq = LinearLayer<S>(width, width, rng, reg, prefix + ".wq");
    wk = LinearLayer<S>(width, width, rng, reg, prefix + ".wk");
    wv = LinearLayer<S>(width, width, rng, reg, prefix + ".wv");
    wo = LinearLayer<S>(width, width, rng, reg, prefix + ".wo");
  }

  // query (B, Lq, width); key/value (B, Lk, width).
  TensorT<S> forward(const TensorT<S>& query, const TensorT<S>& key, const TensorT<S>& value,
                     const AttnMask& mask) {
    size_t b = query.dim(0), lq = query.dim(1), lk = key.dim(1);
    size_t dh = width_ / heads_;
    auto split = [&](const TensorT<S>& t, size_t l) {
      return permute(reshape(t, {b, l, heads_, dh}), {0, 2, 1, 3});  // B,H,L,dh
    };
    auto qh = split(wq.forward(query), lq);
    auto kh = split(wk.forward(key), lk);
    auto vh = split(wv.forward(value), lk);
    auto scores = scale(matmul(qh, permute(kh, {0, 1, 3, 2})),
                        static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
    auto weights = masked_softmax(scores, mask);
    if (capture_weights_) {
      last_weights_.assign(weights.data().begin(), weights.data().end());
      last_weights_shape_ = weights.shape();
    }
    auto ctx = matmul(weights, vh);  // B,H,Lq,dh
    auto merged = reshape(permute(ctx, {0, 2, 1, 3}), {b, lq, width_});
    return wo.forward(merged);
  }

  void set_capture_weights(bool v) { capture_weights_ = v; }
  const std::vector<S>& last_weights() const { return last_weights_; }
  const Shape& last_weights_shape() const { return last_weights_shape_; }

  size_t width() const { return width_; }
  size_t heads() const { return heads_; }

  LinearLayer<S> wq, wk, wv, wo;

 private:
  size_t width_ = 0, heads_ = 0;
  bool capture_weights_ = false;
  std::vector<S> last_weights_;
  Shape last_weights_shape_;
};

template <class S>
class DropoutLayer {
 public:
  explicit DropoutLayer(double p = 0.0) : p_(p) {}

  TensorT<S> forward(const TensorT<S>& x, bool training, RngStream* rng) const {
    if (!training || p_ == 0.0) return x;
    require<ConfigError>(rng != nullptr, "dropout in training mode needs an RNG stream");
    return dropout(x, p_, *rng);
  }

  double rate() const { return p_; }

 private:
  double p_;
};

// Standard sinusoidal positional encoding table, rows = positions.
template <class S>
std::vector<S> sinusoidal_table(size_t max_len, size_t d) {
  std::vector<S> table(max_len * d);
  for (size_t pos = 0; pos < max_len; ++pos)
    for (size_t i = 0; i < d; ++i) {
      double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d);
      double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      table[pos * d + i] = static_cast<S>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  return table;
}

}  // namespace lhdff

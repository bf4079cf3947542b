// Copyright 2026 The DPXLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Small feed-forward networks with exact reverse-mode gradients.
//
// Networks run one example at a time; batches are loops over examples, so
// per-example gradients (needed for DP-SGD clipping) come for free. There
// is deliberately no batch normalization: every layer's output for an
// example depends on that example alone.

#ifndef DPXLAB_NETWORK_HPP
#define DPXLAB_NETWORK_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dpxlab/errors.hpp"
#include "dpxlab/tensor.hpp"

namespace dpxlab::nn {

enum class LayerKind { kDense, kConv2d, kRelu, kAvgPool2d, kGroupNorm, kFlatten };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kAvgPool2d: return "avgpool2d";
    case LayerKind::kGroupNorm: return "groupnorm";
    case LayerKind::kFlatten: return "flatten";
  }
  return "?";
}

inline LayerKind parse_layer_kind(const std::string& s) {
  for (LayerKind k : {LayerKind::kDense, LayerKind::kConv2d, LayerKind::kRelu,
                      LayerKind::kAvgPool2d, LayerKind::kGroupNorm, LayerKind::kFlatten}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown layer kind '" + s + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t in = 0;        // dense
  std::size_t out = 0;       // dense
  std::size_t channels = 0;  // conv2d output channels
  std::size_t groups = 0;    // groupnorm

  static LayerSpec dense(std::size_t in, std::size_t out) {
    return {LayerKind::kDense, in, out, 0, 0};
  }
  static LayerSpec conv2d(std::size_t channels) { return {LayerKind::kConv2d, 0, 0, channels, 0}; }
  static LayerSpec relu() { return {LayerKind::kRelu}; }
  static LayerSpec avgpool2d() { return {LayerKind::kAvgPool2d}; }
  static LayerSpec groupnorm(std::size_t groups) { return {LayerKind::kGroupNorm, 0, 0, 0, groups}; }
  static LayerSpec flatten() { return {LayerKind::kFlatten}; }

  bool operator==(const LayerSpec&) const = default;
};

inline constexpr std::size_t kConvKernel = 3;
inline constexpr double kGroupNormEps = 1e-5;

struct NetworkSpec {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::size_t output_classes = 0;

  bool operator==(const NetworkSpec&) const = default;

  /// Output shape of every layer; throws ConfigError on incompatible layers.
  std::vector<Shape> layer_output_shapes() const {
    if (input_shape.empty() || element_count(input_shape) == 0) {
      throw ConfigError("network input shape must be non-empty");
    }
    std::vector<Shape> shapes;
    Shape cur = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& l = layers[i];
      const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
      switch (l.kind) {
        case LayerKind::kDense:
          if (cur.size() != 1 || cur[0] != l.in || l.out == 0) {
            throw ConfigError(where + ": expects input (" + std::to_string(l.in) + "), got " +
                              shape_string(cur));
          }
          cur = {l.out};
          break;
        case LayerKind::kConv2d:
          if (cur.size() != 3 || l.channels == 0) {
            throw ConfigError(where + ": expects (C, H, W) input, got " + shape_string(cur));
          }
          cur = {l.channels, cur[1], cur[2]};
          break;
        case LayerKind::kAvgPool2d:
          if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) {
            throw ConfigError(where + ": expects (C, H>=2, W>=2), got " + shape_string(cur));
          }
          cur = {cur[0], cur[1] / 2, cur[2] / 2};
          break;
        case LayerKind::kGroupNorm:
          if (l.groups == 0 || cur.empty() || cur[0] % l.groups != 0) {
            throw ConfigError(where + ": channel count must be divisible by groups");
          }
          break;
        case LayerKind::kFlatten:
          cur = {element_count(cur)};
          break;
        case LayerKind::kRelu:
          break;
      }
      shapes.push_back(cur);
    }
    return shapes;
  }

  Shape output_shape() const {
    auto s = layer_output_shapes();
    return s.empty() ? input_shape : s.back();
  }

  void validate() const {
    const Shape out = output_shape();
    if (out.size() != 1 || out[0] != output_classes) {
      throw ConfigError("network output " + shape_string(out) + " does not match " +
                        std::to_string(output_classes) + " outputs");
    }
  }

  /// Stable id for layer i, e.g. "03_relu".
  std::string layer_id(std::size_t i) const {
    std::ostringstream s;
    s << std::setw(2) << std::setfill('0') << i << '_' << to_string(layers.at(i).kind);
    return s.str();
  }

  std::optional<std::size_t> find_layer(const std::string& id) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layer_id(i) == id) return i;
    }
    return std::nullopt;
  }

  /// Multilayer perceptron with ReLU hidden layers.
  static NetworkSpec mlp(std::size_t inputs, const std::vector<std::size_t>& hidden,
                         std::size_t classes) {
    NetworkSpec s;
    s.input_shape = {inputs};
    std::size_t prev = inputs;
    for (std::size_t h : hidden) {
      s.layers.push_back(LayerSpec::dense(prev, h));
      s.layers.push_back(LayerSpec::relu());
      prev = h;
    }
    s.layers.push_back(LayerSpec::dense(prev, classes));
    s.output_classes = classes;
    return s;
  }

  /// conv3x3(c) -> relu -> conv3x3(c) -> relu -> avgpool -> flatten -> dense.
  static NetworkSpec tiny_cnn(std::size_t in_channels, std::size_t height, std::size_t width,
                              std::size_t classes, std::size_t conv_channels = 8) {
    NetworkSpec s;
    s.input_shape = {in_channels, height, width};
    s.layers = {LayerSpec::conv2d(conv_channels), LayerSpec::relu(),
                LayerSpec::conv2d(conv_channels), LayerSpec::relu(),
                LayerSpec::avgpool2d(), LayerSpec::flatten(),
                LayerSpec::dense(conv_channels * (height / 2) * (width / 2), classes)};
    s.output_classes = classes;
    return s;
  }

  /// Dense autoencoder over a flattened input of `dim` features.
  static NetworkSpec autoencoder(std::size_t dim, std::size_t hidden) {
    NetworkSpec s;
    s.input_shape = {dim};
    s.layers = {LayerSpec::dense(dim, hidden), LayerSpec::relu(), LayerSpec::dense(hidden, dim)};
    s.output_classes = dim;
    return s;
  }
};

/// Shapes of the trainable tensors of one layer.
inline std::vector<Shape> parameter_shapes(const LayerSpec& l, const Shape& in_shape) {
  switch (l.kind) {
    case LayerKind::kDense:
      return {{l.out, l.in}, {l.out}};
    case LayerKind::kConv2d:
      return {{l.channels, in_shape.at(0), kConvKernel, kConvKernel}, {l.channels}};
    case LayerKind::kGroupNorm:
      return {{in_shape.at(0)}, {in_shape.at(0)}};
    default:
      return {};
  }
}

enum class TrainingMode { kNonPrivate, kDp };

inline std::string to_string(TrainingMode m) {
  return m == TrainingMode::kDp ? "dp" : "non_private";
}

inline TrainingMode parse_mode(const std::string& s) {
  if (s == "dp") return TrainingMode::kDp;
  if (s == "non_private") return TrainingMode::kNonPrivate;
  throw ConfigError("unknown training mode '" + s + "' (expected dp or non_private)");
}

/// How a set of weights came to be.
struct Provenance {
  TrainingMode mode = TrainingMode::kNonPrivate;
  std::optional<double> epsilon;
  std::optional<double> delta;
  std::optional<double> noise_multiplier;
  std::optional<double> clip_norm;
  std::optional<double> sample_rate;
  std::optional<std::size_t> steps;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  std::string objective = "classifier";  // or "autoencoder"

  bool operator==(const Provenance&) const = default;
};

/// Weights + architecture + provenance. Counts forward passes so callers
/// can verify which code paths touched the model; copies start at zero.
class Model {
 public:
  Model() = default;
  Model(NetworkSpec spec, std::vector<Tensor> weights, Provenance provenance = {})
      : spec_(std::move(spec)), weights_(std::move(weights)), provenance_(std::move(provenance)) {
    index_parameters();
  }
  Model(const Model& o) : Model(o.spec_, o.weights_, o.provenance_) {}
  Model& operator=(const Model& o) {
    if (this != &o) {
      spec_ = o.spec_;
      weights_ = o.weights_;
      provenance_ = o.provenance_;
      index_parameters();
      forward_passes_ = 0;
    }
    return *this;
  }

  /// Randomly initialized network (He-normal weights, zero biases, unit
  /// GroupNorm scale).
  static Model initialize(NetworkSpec spec, std::uint64_t seed) {
    const auto shapes = spec.layer_output_shapes();
    std::mt19937_64 rng(seed);
    std::vector<Tensor> weights;
    Shape in = spec.input_shape;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const LayerSpec& l = spec.layers[i];
      const auto ps = parameter_shapes(l, in);
      if (l.kind == LayerKind::kDense || l.kind == LayerKind::kConv2d) {
        const std::size_t fan_in = element_count(ps[0]) / ps[0][0];
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        Tensor w = Tensor::zeros(ps[0]);
        for (auto& v : w.values()) v = dist(rng);
        weights.push_back(std::move(w));
        weights.push_back(Tensor::zeros(ps[1]));
      } else if (l.kind == LayerKind::kGroupNorm) {
        weights.push_back(Tensor::filled(ps[0], 1.0));
        weights.push_back(Tensor::zeros(ps[1]));
      }
      in = shapes[i];
    }
    return Model(std::move(spec), std::move(weights));
  }

  const NetworkSpec& spec() const noexcept { return spec_; }
  const std::vector<Tensor>& weights() const noexcept { return weights_; }
  std::vector<Tensor>& mutable_weights() noexcept { return weights_; }
  const Provenance& provenance() const noexcept { return provenance_; }
  Provenance& mutable_provenance() noexcept { return provenance_; }

  /// Index into weights() of layer i's first parameter tensor.
  std::size_t first_param(std::size_t layer) const { return param_index_.at(layer); }
  const std::vector<Shape>& layer_shapes() const noexcept { return out_shapes_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& w : weights_) n += w.size();
    return n;
  }

  std::uint64_t forward_passes() const noexcept { return forward_passes_; }
  void note_forward_pass() const noexcept { ++forward_passes_; }

  bool same_weights(const Model& o) const { return spec_ == o.spec_ && weights_ == o.weights_; }

 private:
  void index_parameters() {
    out_shapes_ = spec_.layer_output_shapes();
    param_index_.clear();
    std::size_t idx = 0;
    Shape in = spec_.input_shape;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      param_index_.push_back(idx);
      const auto ps = parameter_shapes(spec_.layers[i], in);
      for (const auto& shape : ps) {
        if (idx >= weights_.size() || weights_[idx].shape() != shape) {
          throw ShapeError("weights do not match layer " + spec_.layer_id(i) + ": expected " +
                           shape_string(shape));
        }
        ++idx;
      }
      in = out_shapes_[i];
    }
    if (idx != weights_.size()) throw ShapeError("model has extra weight tensors");
  }

  NetworkSpec spec_;
  std::vector<Tensor> weights_;
  Provenance provenance_;
  std::vector<std::size_t> param_index_;
  std::vector<Shape> out_shapes_;
  mutable std::atomic<std::uint64_t> forward_passes_{0};
};

/// Layer-by-layer values of one forward pass. values[0] is the input and
/// values[i + 1] the output of layer i.
struct Trace {
  std::vector<Tensor> values;
  // GroupNorm per-layer caches: normalized values and inverse std per group.
  std::vector<std::vector<double>> norm_xhat;
  std::vector<std::vector<double>> norm_inv_std;

  const Tensor& output() const { return values.back(); }
};

namespace detail {

inline void dense_forward(const Tensor& w, const Tensor& b, const Tensor& x, Tensor& y) {
  const std::size_t out = w.dim(0), in = w.dim(1);
  for (std::size_t o = 0; o < out; ++o) {
    double s = b[o];
    for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * x[i];
    y[o] = s;
  }
}

inline void conv_forward(const Tensor& w, const Tensor& b, const Tensor& x, Tensor& y) {
  const std::size_t co = w.dim(0), ci = w.dim(1), h = x.dim(1), wd = x.dim(2);
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < wd; ++c) {
        double s = b[o];
        for (std::size_t i = 0; i < ci; ++i) {
          for (std::size_t kr = 0; kr < kConvKernel; ++kr) {
            const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r + kr) - 1;
            if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kc = 0; kc < kConvKernel; ++kc) {
              const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c + kc) - 1;
              if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(wd)) continue;
              s += w[((o * ci + i) * kConvKernel + kr) * kConvKernel + kc] *
                   x[(i * h + static_cast<std::size_t>(rr)) * wd + static_cast<std::size_t>(cc)];
            }
          }
        }
        y[(o * h + r) * wd + c] = s;
      }
    }
  }
}

inline std::size_t spatial(const Shape& s) {
  return s.size() <= 1 ? 1 : element_count(s) / s[0];
}

}  // namespace detail

/// Runs layers [from, to) starting from `x`, appending each output to the
/// trace. Throws ShapeError if x does not fit layer `from`.
inline void run_layers(const Model& m, Trace& t, std::size_t from, std::size_t to) {
  const NetworkSpec& spec = m.spec();
  const auto& shapes = m.layer_shapes();
  t.norm_xhat.resize(spec.layers.size());
  t.norm_inv_std.resize(spec.layers.size());
  for (std::size_t li = from; li < to; ++li) {
    const LayerSpec& l = spec.layers[li];
    const Tensor& x = t.values.back();
    Tensor y = Tensor::zeros(shapes[li]);
    const std::size_t p = m.first_param(li);
    switch (l.kind) {
      case LayerKind::kDense:
        detail::dense_forward(m.weights()[p], m.weights()[p + 1], x, y);
        break;
      case LayerKind::kConv2d:
        detail::conv_forward(m.weights()[p], m.weights()[p + 1], x, y);
        break;
      case LayerKind::kRelu:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
        break;
      case LayerKind::kAvgPool2d: {
        const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
        const std::size_t oh = h / 2, ow = w / 2;
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t q = 0; q < ow; ++q) {
              double s = 0;
              for (std::size_t dr = 0; dr < 2; ++dr)
                for (std::size_t dq = 0; dq < 2; ++dq) s += x[(k * h + 2 * r + dr) * w + 2 * q + dq];
              y[(k * oh + r) * ow + q] = 0.25 * s;
            }
        break;
      }
      case LayerKind::kGroupNorm: {
        const Tensor& gamma = m.weights()[p];
        const Tensor& beta = m.weights()[p + 1];
        const std::size_t channels = x.dim(0), sp = detail::spatial(x.shape());
        const std::size_t per_group = channels / l.groups;
        const std::size_t gsize = per_group * sp;
        auto& xhat = t.norm_xhat[li];
        auto& inv = t.norm_inv_std[li];
        xhat.assign(x.size(), 0.0);
        inv.assign(l.groups, 0.0);
        for (std::size_t g = 0; g < l.groups; ++g) {
          const std::size_t base = g * gsize;
          double mean = 0;
          for (std::size_t i = 0; i < gsize; ++i) mean += x[base + i];
          mean /= static_cast<double>(gsize);
          double var = 0;
          for (std::size_t i = 0; i < gsize; ++i) var += (x[base + i] - mean) * (x[base + i] - mean);
          var /= static_cast<double>(gsize);
          inv[g] = 1.0 / std::sqrt(var + kGroupNormEps);
          for (std::size_t i = 0; i < gsize; ++i) {
            const std::size_t ch = (base + i) / sp;
            xhat[base + i] = (x[base + i] - mean) * inv[g];
            y[base + i] = gamma[ch] * xhat[base + i] + beta[ch];
          }
        }
        break;
      }
      case LayerKind::kFlatten:
        std::copy(x.values().begin(), x.values().end(), y.values().begin());
        break;
    }
    t.values.push_back(std::move(y));
  }
}

inline Trace forward_trace(const Model& m, const Tensor& x) {
  if (x.shape() != m.spec().input_shape) {
    throw ShapeError("input shape " + shape_string(x.shape()) + " does not match network input " +
                     shape_string(m.spec().input_shape));
  }
  m.note_forward_pass();
  Trace t;
  t.values.reserve(m.spec().layers.size() + 1);
  t.values.push_back(x);
  run_layers(m, t, 0, m.spec().layers.size());
  return t;
}

inline Tensor logits(const Model& m, const Tensor& x) { return forward_trace(m, x).output(); }

struct LayerActivation {
  std::string layer_id;
  Tensor value;
};

struct ForwardResult {
  Tensor logits;
  std::vector<LayerActivation> activations;  // one per ReLU layer
};

/// Logits plus the output of every nonlinearity, in depth order.
inline ForwardResult forward_with_activations(const Model& m, const Tensor& x) {
  Trace t = forward_trace(m, x);
  ForwardResult r;
  r.logits = t.output();
  for (std::size_t i = 0; i < m.spec().layers.size(); ++i) {
    if (m.spec().layers[i].kind == LayerKind::kRelu) {
      r.activations.push_back({m.spec().layer_id(i), t.values[i + 1]});
    }
  }
  return r;
}

/// Resumes the forward pass from a replacement value for layer `layer_id`'s
/// output. Used to probe sensitivities by perturbation.
inline Tensor forward_from_layer(const Model& m, const std::string& layer_id,
                                 const Tensor& activation) {
  const auto idx = m.spec().find_layer(layer_id);
  if (!idx) throw ConfigError("unknown layer '" + layer_id + "'");
  if (activation.shape() != m.layer_shapes()[*idx]) {
    throw ShapeError("activation shape " + shape_string(activation.shape()) +
                     " does not match layer " + layer_id);
  }
  m.note_forward_pass();
  Trace t;
  t.values.push_back(activation);
  run_layers(m, t, *idx + 1, m.spec().layers.size());
  return t.output();
}

inline std::size_t argmax(const Tensor& v) {
  return static_cast<std::size_t>(
      std::distance(v.values().begin(), std::max_element(v.values().begin(), v.values().end())));
}

inline std::size_t predict(const Model& m, const Tensor& x) { return argmax(logits(m, x)); }

/// Results of a reverse pass. value_grads[i] is d(objective)/d(values[i]) of
/// the trace; param_grads is flat in weights() order (empty unless asked).
struct Gradients {
  std::vector<Tensor> value_grads;
  std::vector<double> param_grads;

  const Tensor& input() const { return value_grads.front(); }
};

/// Backpropagates `output_grad` through the whole trace.
inline Gradients backward(const Model& m, const Trace& t, const Tensor& output_grad,
                          bool want_params) {
  const NetworkSpec& spec = m.spec();
  const std::size_t n_layers = spec.layers.size();
  Gradients g;
  g.value_grads.resize(n_layers + 1);
  g.value_grads[n_layers] = output_grad;
  std::vector<std::size_t> offsets;
  if (want_params) {
    std::size_t total = 0;
    for (const auto& w : m.weights()) {
      offsets.push_back(total);
      total += w.size();
    }
    g.param_grads.assign(total, 0.0);
  }
  for (std::size_t li = n_layers; li-- > 0;) {
    const LayerSpec& l = spec.layers[li];
    const Tensor& x = t.values[li];
    const Tensor& dy = g.value_grads[li + 1];
    Tensor dx = Tensor::zeros(x.shape());
    const std::size_t p = m.first_param(li);
    switch (l.kind) {
      case LayerKind::kDense: {
        const Tensor& w = m.weights()[p];
        const std::size_t out = w.dim(0), in = w.dim(1);
        for (std::size_t o = 0; o < out; ++o) {
          const double d = dy[o];
          for (std::size_t i = 0; i < in; ++i) dx[i] += w[o * in + i] * d;
        }
        if (want_params) {
          double* gw = &g.param_grads[offsets[p]];
          double* gb = &g.param_grads[offsets[p + 1]];
          for (std::size_t o = 0; o < out; ++o) {
            gb[o] += dy[o];
            for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += dy[o] * x[i];
          }
        }
        break;
      }
      case LayerKind::kConv2d: {
        const Tensor& w = m.weights()[p];
        const std::size_t co = w.dim(0), ci = w.dim(1), h = x.dim(1), wd = x.dim(2);
        double* gw = want_params ? &g.param_grads[offsets[p]] : nullptr;
        double* gb = want_params ? &g.param_grads[offsets[p + 1]] : nullptr;
        for (std::size_t o = 0; o < co; ++o) {
          for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < wd; ++c) {
              const double d = dy[(o * h + r) * wd + c];
              if (gb) gb[o] += d;
              for (std::size_t i = 0; i < ci; ++i) {
                for (std::size_t kr = 0; kr < kConvKernel; ++kr) {
                  const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r + kr) - 1;
                  if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t kc = 0; kc < kConvKernel; ++kc) {
                    const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c + kc) - 1;
                    if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(wd)) continue;
                    const std::size_t xi =
                        (i * h + static_cast<std::size_t>(rr)) * wd + static_cast<std::size_t>(cc);
                    const std::size_t wi = ((o * ci + i) * kConvKernel + kr) * kConvKernel + kc;
                    dx[xi] += w[wi] * d;
                    if (gw) gw[wi] += x[xi] * d;
                  }
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::kRelu:
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
        break;
      case LayerKind::kAvgPool2d: {
        const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
        const std::size_t oh = h / 2, ow = w / 2;
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t q = 0; q < ow; ++q) {
              const double d = 0.25 * dy[(k * oh + r) * ow + q];
              for (std::size_t dr = 0; dr < 2; ++dr)
                for (std::size_t dq = 0; dq < 2; ++dq) dx[(k * h + 2 * r + dr) * w + 2 * q + dq] += d;
            }
        break;
      }
      case LayerKind::kGroupNorm: {
        const Tensor& gamma = m.weights()[p];
        const std::size_t sp = detail::spatial(x.shape());
        const std::size_t gsize = x.dim(0) / l.groups * sp;
        const auto& xhat = t.norm_xhat[li];
        const auto& inv = t.norm_inv_std[li];
        double* gg = want_params ? &g.param_grads[offsets[p]] : nullptr;
        double* gbeta = want_params ? &g.param_grads[offsets[p + 1]] : nullptr;
        for (std::size_t grp = 0; grp < l.groups; ++grp) {
          const std::size_t base = grp * gsize;
          double sum_d = 0, sum_dx = 0;
          for (std::size_t i = 0; i < gsize; ++i) {
            const std::size_t ch = (base + i) / sp;
            const double dxhat = dy[base + i] * gamma[ch];
            sum_d += dxhat;
            sum_dx += dxhat * xhat[base + i];
            if (gg) {
              gg[ch] += dy[base + i] * xhat[base + i];
              gbeta[ch] += dy[base + i];
            }
          }
          const double nd = static_cast<double>(gsize);
          for (std::size_t i = 0; i < gsize; ++i) {
            const std::size_t ch = (base + i) / sp;
            const double dxhat = dy[base + i] * gamma[ch];
            dx[base + i] = inv[grp] / nd * (nd * dxhat - sum_d - xhat[base + i] * sum_dx);
          }
        }
        break;
      }
      case LayerKind::kFlatten:
        std::copy(dy.values().begin(), dy.values().end(), dx.values().begin());
        break;
    }
    g.value_grads[li] = std::move(dx);
  }
  return g;
}

inline Tensor unit_vector(std::size_t n, std::size_t i) {
  Tensor e = Tensor::zeros({n});
  e[i] = 1.0;
  return e;
}

inline void require_class(const Model& m, std::size_t class_index) {
  if (class_index >= m.spec().output_classes) {
    throw ConfigError("class index " + std::to_string(class_index) + " out of range (" +
                      std::to_string(m.spec().output_classes) + " outputs)");
  }
}

/// d logit_c / d x by reverse mode.
inline Tensor input_gradient(const Model& m, const Tensor& x, std::size_t class_index) {
  require_class(m, class_index);
  const Trace t = forward_trace(m, x);
  return backward(m, t, unit_vector(m.spec().output_classes, class_index), false).input();
}

/// d logit_c / d (output of layer `layer_id`).
inline Tensor layer_sensitivity(const Model& m, const Tensor& x, std::size_t class_index,
                                const std::string& layer_id) {
  const auto idx = m.spec().find_layer(layer_id);
  if (!idx) throw ConfigError("unknown layer '" + layer_id + "'");
  require_class(m, class_index);
  const Trace t = forward_trace(m, x);
  return backward(m, t, unit_vector(m.spec().output_classes, class_index), false)
      .value_grads[*idx + 1];
}

enum class Loss { kSoftmaxCrossEntropy, kMeanSquaredError };

/// Loss value and d loss / d output for one example. For cross-entropy the
/// target is a class index; for MSE the target is the input itself.
inline double loss_and_grad(Loss loss, const Tensor& output, std::size_t label,
                            const Tensor* target, Tensor& grad) {
  grad = Tensor::zeros(output.shape());
  if (loss == Loss::kSoftmaxCrossEntropy) {
    const double mx = *std::max_element(output.values().begin(), output.values().end());
    double z = 0;
    for (double v : output.values()) z += std::exp(v - mx);
    for (std::size_t i = 0; i < output.size(); ++i) grad[i] = std::exp(output[i] - mx) / z;
    const double value = -(output[label] - mx - std::log(z));
    grad[label] -= 1.0;
    return value;
  }
  if (!target || target->size() != output.size()) {
    throw ShapeError("MSE target must match the output size");
  }
  double value = 0;
  const double n = static_cast<double>(output.size());
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double d = output[i] - (*target)[i];
    value += d * d;
    grad[i] = 2.0 * d / n;
  }
  return value / n;
}

/// Flat parameter gradient of the loss on one example.
inline std::vector<double> example_gradient(const Model& m, const Tensor& x, std::size_t label,
                                            Loss loss, double* loss_value = nullptr) {
  const Trace t = forward_trace(m, x);
  Tensor dout;
  const Tensor flat_x = x.reshaped({x.size()});
  const double value = loss_and_grad(loss, t.output(), label, &flat_x, dout);
  if (loss_value) *loss_value = value;
  return backward(m, t, dout, true).param_grads;
}

/// Mean squared reconstruction error of an autoencoder on x.
inline double ae_reconstruction_error(const Model& ae, const Tensor& x) {
  if (element_count(ae.spec().output_shape()) != x.size() || ae.spec().input_shape != x.shape()) {
    throw ShapeError("autoencoder expects input " + shape_string(ae.spec().input_shape) +
                     " with matching output, got " + shape_string(x.shape()));
  }
  const Tensor y = logits(ae, x);
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (y[i] - x[i]) * (y[i] - x[i]);
  return s / static_cast<double>(x.size());
}

}  // namespace dpxlab::nn

#endif  // DPXLAB_NETWORK_HPP

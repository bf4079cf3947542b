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

// Gradient-based feature attribution: Saliency, SmoothGrad, Integrated
// Gradients, Grad-Shap and Grad-CAM, plus exact Shapley values by subset
// enumeration for tiny inputs. All targets are pre-softmax class logits.

#ifndef DPXLAB_EXPLAINERS_HPP
#define DPXLAB_EXPLAINERS_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "dpxlab/errors.hpp"
#include "dpxlab/network.hpp"
#include "dpxlab/parallel.hpp"
#include "dpxlab/tensor.hpp"

namespace dpxlab::explain {

using nlohmann::json;

enum class Explainer { kSaliency, kSmoothGrad, kIntegratedGradients, kGradShap, kGradCam };

inline std::string to_string(Explainer e) {
  switch (e) {
    case Explainer::kSaliency: return "saliency";
    case Explainer::kSmoothGrad: return "smoothgrad";
    case Explainer::kIntegratedGradients: return "integrated_gradients";
    case Explainer::kGradShap: return "grad_shap";
    case Explainer::kGradCam: return "grad_cam";
  }
  return "?";
}

inline Explainer parse_explainer(const std::string& s) {
  for (Explainer e : {Explainer::kSaliency, Explainer::kSmoothGrad,
                      Explainer::kIntegratedGradients, Explainer::kGradShap,
                      Explainer::kGradCam}) {
    if (to_string(e) == s) return e;
  }
  if (s == "ig") return Explainer::kIntegratedGradients;
  if (s == "gradshap") return Explainer::kGradShap;
  if (s == "gradcam") return Explainer::kGradCam;
  throw ConfigError("unknown explainer '" + s + "'");
}

struct SmoothGradParams {
  std::size_t n_samples = 25;
  double noise_sigma_fraction = 0.1;  // of the input's value range
};

struct IgParams {
  std::size_t steps = 50;
  std::optional<Tensor> baseline;  // zero tensor when unset
};

struct GradShapParams {
  std::size_t n_baselines = 8;
  std::size_t n_alpha = 16;
};

struct GradCamParams {
  std::optional<std::string> target_layer;  // last conv layer when unset
};

struct ExplainerParams {
  SmoothGradParams smoothgrad;
  IgParams ig;
  GradShapParams gradshap;
  GradCamParams gradcam;

  void validate() const {
    if (smoothgrad.n_samples < 1) throw ConfigError("smoothgrad n_samples must be >= 1");
    if (!(smoothgrad.noise_sigma_fraction >= 0.0)) {
      throw ConfigError("smoothgrad noise fraction must be >= 0");
    }
    if (ig.steps < 1) throw ConfigError("ig steps must be >= 1");
    if (gradshap.n_baselines < 1 || gradshap.n_alpha < 1) {
      throw ConfigError("grad_shap counts must be >= 1");
    }
  }

  /// The hyperparameters one explainer actually used.
  json used_by(Explainer e) const {
    switch (e) {
      case Explainer::kSaliency: return json::object();
      case Explainer::kSmoothGrad:
        return {{"n_samples", smoothgrad.n_samples},
                {"noise_sigma_fraction", smoothgrad.noise_sigma_fraction}};
      case Explainer::kIntegratedGradients:
        return {{"steps", ig.steps}, {"rule", "midpoint"},
                {"baseline", ig.baseline ? "custom" : "zero"}};
      case Explainer::kGradShap:
        return {{"n_baselines", gradshap.n_baselines}, {"n_alpha", gradshap.n_alpha}};
      case Explainer::kGradCam:
        return {{"target_layer", gradcam.target_layer ? json(*gradcam.target_layer) : json(nullptr)},
                {"upsample", "bilinear"}};
    }
    return json::object();
  }
};

struct AttributionMap {
  Tensor values;
  std::string explainer_id;
  std::string model_id;
  std::size_t class_index = 0;
  json params = json::object();
};

namespace detail {

// Running mean keeps constant sequences exact.
inline void accumulate_mean(std::vector<double>& mean, std::span<const double> sample,
                            std::size_t k) {
  const double inv = 1.0 / static_cast<double>(k + 1);
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (sample[i] - mean[i]) * inv;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace detail

/// |d logit_c / d x| elementwise.
inline Tensor saliency(const nn::Model& m, const Tensor& x, std::size_t class_index) {
  Tensor g = nn::input_gradient(m, x, class_index);
  for (double& v : g.values()) v = std::abs(v);
  return g;
}

/// Mean input gradient over noisy copies x + N(0, (fraction * range(x))^2).
inline Tensor smoothgrad(const nn::Model& m, const Tensor& x, std::size_t class_index,
                         const SmoothGradParams& p, std::mt19937_64& rng) {
  if (p.n_samples < 1) throw ConfigError("smoothgrad n_samples must be >= 1");
  if (!(p.noise_sigma_fraction >= 0.0)) throw ConfigError("smoothgrad noise fraction must be >= 0");
  const auto [lo, hi] = std::minmax_element(x.values().begin(), x.values().end());
  const double sigma = p.noise_sigma_fraction * (*hi - *lo);
  const std::uint64_t base = rng();
  std::vector<Tensor> grads(p.n_samples);
  parallel_for(p.n_samples, [&](std::size_t k) {
    Tensor noisy = x;
    if (sigma > 0.0) {
      std::mt19937_64 local(detail::derive_seed(base, k));
      std::normal_distribution<double> noise(0.0, sigma);
      for (double& v : noisy.values()) v += noise(local);
    }
    grads[k] = nn::input_gradient(m, noisy, class_index);
  });
  std::vector<double> mean(x.size(), 0.0);
  for (std::size_t k = 0; k < grads.size(); ++k) detail::accumulate_mean(mean, grads[k].values(), k);
  return Tensor(x.shape(), std::move(mean));
}

/// (x - b) times the midpoint-rule average of gradients along b -> x.
inline Tensor integrated_gradients(const nn::Model& m, const Tensor& x, std::size_t class_index,
                                   const IgParams& p) {
  if (p.steps < 1) throw ConfigError("ig steps must be >= 1");
  const Tensor baseline = p.baseline ? *p.baseline : Tensor::zeros(x.shape());
  if (baseline.shape() != x.shape()) {
    throw ShapeError("baseline shape " + shape_string(baseline.shape()) + " does not match input " +
                     shape_string(x.shape()));
  }
  std::vector<Tensor> grads(p.steps);
  parallel_for(p.steps, [&](std::size_t k) {
    const double alpha = (static_cast<double>(k) + 0.5) / static_cast<double>(p.steps);
    Tensor point = baseline;
    for (std::size_t i = 0; i < x.size(); ++i) point[i] += alpha * (x[i] - baseline[i]);
    grads[k] = nn::input_gradient(m, point, class_index);
  });
  std::vector<double> mean(x.size(), 0.0);
  for (std::size_t k = 0; k < grads.size(); ++k) detail::accumulate_mean(mean, grads[k].values(), k);
  for (std::size_t i = 0; i < x.size(); ++i) mean[i] *= x[i] - baseline[i];
  return Tensor(x.shape(), std::move(mean));
}

/// Expected (x - b) * grad f(b + a (x - b)) over baselines b drawn from
/// `reference` (rows) and a ~ U(0, 1).
inline Tensor grad_shap(const nn::Model& m, const Tensor& x, std::size_t class_index,
                        const GradShapParams& p, const Tensor& reference, std::mt19937_64& rng) {
  if (p.n_baselines < 1 || p.n_alpha < 1) throw ConfigError("grad_shap counts must be >= 1");
  if (reference.rank() == 0 || reference.dim(0) == 0) {
    throw ConfigError("grad_shap needs a non-empty reference set");
  }
  Shape row_shape(reference.shape().begin() + 1, reference.shape().end());
  if (row_shape != x.shape()) {
    throw ShapeError("reference rows " + shape_string(row_shape) + " do not match input " +
                     shape_string(x.shape()));
  }
  const std::size_t total = p.n_baselines * p.n_alpha;
  std::uniform_int_distribution<std::size_t> pick(0, reference.dim(0) - 1);
  std::vector<std::size_t> rows(p.n_baselines);
  for (auto& r : rows) r = pick(rng);
  const std::uint64_t base = rng();
  std::vector<Tensor> terms(total);
  parallel_for(total, [&](std::size_t k) {
    const Tensor b = reference.row(rows[k / p.n_alpha]);
    std::mt19937_64 local(detail::derive_seed(base, k));
    const double alpha = std::uniform_real_distribution<double>(0.0, 1.0)(local);
    Tensor point = b;
    for (std::size_t i = 0; i < x.size(); ++i) point[i] += alpha * (x[i] - b[i]);
    Tensor g = nn::input_gradient(m, point, class_index);
    for (std::size_t i = 0; i < x.size(); ++i) g[i] *= x[i] - b[i];
    terms[k] = std::move(g);
  });
  std::vector<double> mean(x.size(), 0.0);
  for (std::size_t k = 0; k < total; ++k) detail::accumulate_mean(mean, terms[k].values(), k);
  return Tensor(x.shape(), std::move(mean));
}

/// Id of the last conv2d layer, or nullopt.
inline std::optional<std::string> last_conv_layer(const nn::NetworkSpec& spec) {
  for (std::size_t i = spec.layers.size(); i-- > 0;) {
    if (spec.layers[i].kind == nn::LayerKind::kConv2d) return spec.layer_id(i);
  }
  return std::nullopt;
}

/// Bilinear resize of an (H, W) map, half-pixel centres (align_corners off).
inline Tensor resize_bilinear(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  if (map.rank() != 2) throw ShapeError("resize expects an (H, W) map");
  const std::size_t in_h = map.dim(0), in_w = map.dim(1);
  Tensor out = Tensor::zeros({out_h, out_w});
  auto source = [](std::size_t dst, std::size_t in, std::size_t out_n) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) /
                   static_cast<double>(out_n) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    return std::tuple{i0, i1, s - static_cast<double>(i0)};
  };
  for (std::size_t r = 0; r < out_h; ++r) {
    const auto [r0, r1, fr] = source(r, in_h, out_h);
    for (std::size_t c = 0; c < out_w; ++c) {
      const auto [c0, c1, fc] = source(c, in_w, out_w);
      const double top = map.at({r0, c0}) * (1 - fc) + map.at({r0, c1}) * fc;
      const double bottom = map.at({r1, c0}) * (1 - fc) + map.at({r1, c1}) * fc;
      out.at({r, c}) = top * (1 - fr) + bottom * fr;
    }
  }
  return out;
}

/// ReLU(sum_k a_k A_k) at the target layer's resolution, a_k being the
/// spatial mean of d logit_c / d A_k.
inline Tensor grad_cam_coarse(const nn::Model& m, const Tensor& x, std::size_t class_index,
                              const GradCamParams& p) {
  const std::optional<std::string> id = p.target_layer ? p.target_layer : last_conv_layer(m.spec());
  if (!id) throw ConfigError("grad_cam needs a conv layer; the model has none");
  const auto idx = m.spec().find_layer(*id);
  if (!idx) throw ConfigError("unknown grad_cam target layer '" + *id + "'");
  if (m.layer_shapes()[*idx].size() != 3) {
    throw ConfigError("grad_cam target layer " + *id + " has no (C, H, W) feature maps");
  }
  nn::require_class(m, class_index);
  const nn::Trace t = nn::forward_trace(m, x);
  const Tensor& a = t.values[*idx + 1];
  const Tensor g =
      nn::backward(m, t, nn::unit_vector(m.spec().output_classes, class_index), false)
          .value_grads[*idx + 1];
  const std::size_t channels = a.dim(0), h = a.dim(1), w = a.dim(2), hw = h * w;
  Tensor cam = Tensor::zeros({h, w});
  for (std::size_t k = 0; k < channels; ++k) {
    double weight = 0;
    for (std::size_t s = 0; s < hw; ++s) weight += g[k * hw + s];
    weight /= static_cast<double>(hw);
    for (std::size_t s = 0; s < hw; ++s) cam[s] += weight * a[k * hw + s];
  }
  for (double& v : cam.values()) v = std::max(0.0, v);
  return cam;
}

/// Grad-CAM upsampled to the input's (H, W).
inline Tensor grad_cam(const nn::Model& m, const Tensor& x, std::size_t class_index,
                       const GradCamParams& p) {
  if (x.rank() != 3) throw ConfigError("grad_cam needs a (C, H, W) input");
  return resize_bilinear(grad_cam_coarse(m, x, class_index, p), x.dim(1), x.dim(2));
}

inline constexpr std::size_t kMaxShapleyFeatures = 12;

/// Exact Shapley values of the set function v(mask), mask bit i set when
/// feature i is in the coalition.
inline std::vector<double> exact_shapley(std::size_t d,
                                         const std::function<double(std::uint32_t)>& value) {
  if (d > kMaxShapleyFeatures) {
    throw ScaleError("exact Shapley enumeration supports at most " +
                     std::to_string(kMaxShapleyFeatures) + " features, got " + std::to_string(d));
  }
  const std::uint32_t n_sets = 1u << d;
  std::vector<double> v(n_sets);
  for (std::uint32_t s = 0; s < n_sets; ++s) v[s] = value(s);
  // weight[k] = k! (d - k - 1)! / d!
  std::vector<double> weight(d);
  for (std::size_t k = 0; k < d; ++k) {
    weight[k] = std::exp(std::lgamma(k + 1.0) + std::lgamma(static_cast<double>(d - k)) -
                         std::lgamma(d + 1.0));
  }
  std::vector<double> phi(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const std::uint32_t bit = 1u << i;
    for (std::uint32_t s = 0; s < n_sets; ++s) {
      if (s & bit) continue;
      phi[i] += weight[static_cast<std::size_t>(std::popcount(s))] * (v[s | bit] - v[s]);
    }
  }
  return phi;
}

/// Shapley values of f on x where absent features take baseline values.
inline std::vector<double> exact_shapley(const std::function<double(const Tensor&)>& f,
                                         const Tensor& x, const Tensor& baseline) {
  if (baseline.shape() != x.shape()) throw ShapeError("baseline shape does not match input");
  if (x.size() > kMaxShapleyFeatures) {
    throw ScaleError("exact Shapley enumeration supports at most " +
                     std::to_string(kMaxShapleyFeatures) + " features, got " +
                     std::to_string(x.size()));
  }
  return exact_shapley(x.size(), [&](std::uint32_t mask) {
    Tensor probe = baseline;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (mask & (1u << i)) probe[i] = x[i];
    }
    return f(probe);
  });
}

/// Inputs every explainer call may need besides the model and example.
struct ExplainContext {
  const Tensor* reference = nullptr;  // grad_shap baselines
  std::string model_id;
};

inline AttributionMap explain(const nn::Model& m, Explainer e, const Tensor& x,
                              std::size_t class_index, const ExplainerParams& p,
                              std::mt19937_64& rng, const ExplainContext& ctx = {}) {
  p.validate();
  AttributionMap out;
  out.explainer_id = to_string(e);
  out.model_id = ctx.model_id;
  out.class_index = class_index;
  out.params = p.used_by(e);
  switch (e) {
    case Explainer::kSaliency:
      out.values = saliency(m, x, class_index);
      break;
    case Explainer::kSmoothGrad:
      out.values = smoothgrad(m, x, class_index, p.smoothgrad, rng);
      break;
    case Explainer::kIntegratedGradients:
      out.values = integrated_gradients(m, x, class_index, p.ig);
      break;
    case Explainer::kGradShap:
      if (!ctx.reference) throw ConfigError("grad_shap needs a reference set");
      out.values = grad_shap(m, x, class_index, p.gradshap, *ctx.reference, rng);
      break;
    case Explainer::kGradCam: {
      GradCamParams gp = p.gradcam;
      if (!gp.target_layer) gp.target_layer = last_conv_layer(m.spec());
      out.params["target_layer"] = gp.target_layer ? json(*gp.target_layer) : json(nullptr);
      out.values = grad_cam(m, x, class_index, gp);
      break;
    }
  }
  if (!out.values.all_finite()) throw NonFiniteError(out.explainer_id + " produced non-finite values");
  return out;
}

}  // namespace dpxlab::explain

#endif  // DPXLAB_EXPLAINERS_HPP

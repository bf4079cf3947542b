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

// SGD and DP-SGD training loops.
//
// DP-SGD step: per-example gradients g_i are scaled by min(1, C / ||g_i||),
// summed, perturbed with N(0, (sigma C)^2) per coordinate and divided by the
// batch size. In dp training mode batches are Poisson-sampled with rate
// q = batch_size / N and the noise multiplier is the smallest one whose
// accounted epsilon meets the target.

#ifndef DPXLAB_TRAINING_HPP
#define DPXLAB_TRAINING_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "dpxlab/accountant.hpp"
#include "dpxlab/errors.hpp"
#include "dpxlab/network.hpp"
#include "dpxlab/parallel.hpp"
#include "dpxlab/tensor.hpp"

namespace dpxlab::nn {

struct Dataset {
  Tensor inputs;  // (N, ...input shape)
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  Tensor example(std::size_t i) const { return inputs.row(i); }

  void validate() const {
    if (labels.empty()) throw ConfigError("dataset is empty");
    if (inputs.rank() < 2 || inputs.dim(0) != labels.size()) {
      throw ShapeError("dataset inputs " + shape_string(inputs.shape()) + " do not match " +
                       std::to_string(labels.size()) + " labels");
    }
    for (std::size_t y : labels) {
      if (y >= classes) throw ConfigError("label " + std::to_string(y) + " out of range");
    }
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    std::vector<Tensor> rows;
    Dataset out;
    out.classes = classes;
    for (std::size_t i : idx) {
      rows.push_back(example(i));
      out.labels.push_back(labels[i]);
    }
    out.inputs = stack(rows);
    return out;
  }
};

struct Example {
  Tensor x;
  std::size_t label = 0;
};

inline double l2_norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct PrivatizeReport {
  std::vector<double> pre_clip_norms;
  std::vector<double> post_clip_norms;
};

/// Clips, sums, noises and averages per-example gradients. `denominator`
/// is the batch size the sum is divided by. sigma == 0 adds no noise.
inline std::vector<double> privatize_gradients(std::span<const std::vector<double>> per_example,
                                               std::size_t dim, double clip_norm, double sigma,
                                               double denominator, std::mt19937_64& rng,
                                               PrivatizeReport* report = nullptr) {
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be > 0");
  if (!(sigma >= 0.0)) throw ConfigError("noise multiplier must be >= 0");
  if (!(denominator > 0.0)) throw ConfigError("batch denominator must be > 0");
  std::vector<double> sum(dim, 0.0);
  std::vector<double> scaled;
  for (const auto& g : per_example) {
    if (g.size() != dim) throw ShapeError("per-example gradient size mismatch");
    const double norm = l2_norm(g);
    const double factor = norm > clip_norm ? clip_norm / norm : 1.0;
    scaled.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) scaled[j] = g[j] * factor;
    const double clipped = l2_norm(scaled);
    if (clipped > clip_norm * (1.0 + 1e-12) + 1e-12) {
      throw std::logic_error("post-clip gradient norm exceeds clip bound");
    }
    if (report) {
      report->pre_clip_norms.push_back(norm);
      report->post_clip_norms.push_back(clipped);
    }
    for (std::size_t j = 0; j < dim; ++j) sum[j] += scaled[j];
  }
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma * clip_norm);
    for (double& v : sum) v += noise(rng);
  }
  for (double& v : sum) v /= denominator;
  return sum;
}

/// Per-example flat gradients, computed in parallel into fixed slots.
inline std::vector<std::vector<double>> per_example_gradients(const Model& m,
                                                              std::span<const Example> batch,
                                                              Loss loss) {
  std::vector<std::vector<double>> grads(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    grads[i] = example_gradient(m, batch[i].x, batch[i].label, loss);
  });
  return grads;
}

inline void apply_update(Model& m, std::span<const double> grad, double lr) {
  std::size_t off = 0;
  for (Tensor& w : m.mutable_weights()) {
    for (double& v : w.values()) v -= lr * grad[off++];
  }
}

/// Mean-gradient SGD step.
inline std::vector<double> sgd_step(Model& m, std::span<const Example> batch, double lr,
                                    Loss loss = Loss::kSoftmaxCrossEntropy) {
  if (batch.empty()) throw ConfigError("empty batch");
  const auto grads = per_example_gradients(m, batch, loss);
  std::vector<double> mean(m.parameter_count(), 0.0);
  for (const auto& g : grads) {
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += g[j];
  }
  for (double& v : mean) v /= static_cast<double>(batch.size());
  apply_update(m, mean, lr);
  return mean;
}

struct DpStepConfig {
  double clip_norm = 1.0;
  double noise_multiplier = 1.0;
  double learning_rate = 0.1;
};

struct DpStepReport {
  std::vector<double> noisy_gradient;
  PrivatizeReport clipping;
};

inline DpStepReport dp_update(Model& m, std::span<const Example> batch, const DpStepConfig& cfg,
                              double denominator, std::mt19937_64& rng, Loss loss) {
  const auto grads = per_example_gradients(m, batch, loss);
  DpStepReport r;
  r.noisy_gradient = privatize_gradients(grads, m.parameter_count(), cfg.clip_norm,
                                         cfg.noise_multiplier, denominator, rng, &r.clipping);
  apply_update(m, r.noisy_gradient, cfg.learning_rate);
  return r;
}

/// One DP-SGD step on an explicit batch, averaging over the batch size.
inline DpStepReport dp_sgd_step(Model& m, std::span<const Example> batch, const DpStepConfig& cfg,
                                std::mt19937_64& rng, Loss loss = Loss::kSoftmaxCrossEntropy) {
  if (batch.empty()) throw ConfigError("empty batch");
  return dp_update(m, batch, cfg, static_cast<double>(batch.size()), rng, loss);
}

struct TrainConfig {
  double epsilon_target = 1.0;
  double delta = 1e-3;
  double clip_norm = 1.0;
  std::size_t batch_size = 64;
  double learning_rate = 0.1;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;

  void validate(TrainingMode mode) const {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (mode == TrainingMode::kDp) {
      if (!(epsilon_target > 0.0)) throw ConfigError("epsilon_target must be > 0");
      if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
      if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
    }
  }
};

/// The epsilon grid studied for private models.
inline const std::vector<double>& epsilon_grid() {
  static const std::vector<double> grid{0.4, 0.7, 1.0, 4.0, 7.0, 10.0};
  return grid;
}

namespace detail {

inline std::vector<Example> gather(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<Example> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back({data.example(i), data.labels[i]});
  return out;
}

inline Model train_impl(const Dataset& data, const NetworkSpec& spec, const TrainConfig& cfg,
                        TrainingMode mode, Loss loss) {
  data.validate();
  cfg.validate(mode);
  Shape expect = data.inputs.shape();
  expect.erase(expect.begin());
  if (expect != spec.input_shape) {
    throw ShapeError("dataset example shape " + shape_string(expect) +
                     " does not match network input " + shape_string(spec.input_shape));
  }
  Model model = Model::initialize(spec, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t n = data.size();
  Provenance prov;
  prov.mode = mode;
  prov.epochs = cfg.epochs;
  prov.batch_size = cfg.batch_size;
  prov.learning_rate = cfg.learning_rate;
  prov.seed = cfg.seed;
  prov.objective = loss == Loss::kMeanSquaredError ? "autoencoder" : "classifier";

  if (mode == TrainingMode::kNonPrivate) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t at = 0; at < n; at += cfg.batch_size) {
        const std::size_t end = std::min(n, at + cfg.batch_size);
        const auto batch = gather(data, std::span(order).subspan(at, end - at));
        sgd_step(model, batch, cfg.learning_rate, loss);
      }
    }
  } else {
    const double q = std::min(1.0, static_cast<double>(cfg.batch_size) / static_cast<double>(n));
    const std::size_t per_epoch = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(n) /
                                                 static_cast<double>(cfg.batch_size))));
    const auto steps = static_cast<long long>(cfg.epochs * per_epoch);
    const double sigma = accountant::noise_for_epsilon(cfg.epsilon_target, q, steps, cfg.delta);
    const DpStepConfig step_cfg{cfg.clip_norm, sigma, cfg.learning_rate};
    const double denominator = q * static_cast<double>(n);
    std::bernoulli_distribution take(q);
    std::vector<std::size_t> picked;
    for (long long s = 0; s < steps; ++s) {
      picked.clear();
      for (std::size_t i = 0; i < n; ++i) {
        if (take(rng)) picked.push_back(i);
      }
      // An empty Poisson batch still releases a noise-only update.
      const auto batch = gather(data, picked);
      dp_update(model, batch, step_cfg, denominator, rng, loss);
    }
    prov.noise_multiplier = sigma;
    prov.clip_norm = cfg.clip_norm;
    prov.delta = cfg.delta;
    prov.sample_rate = q;
    prov.steps = static_cast<std::size_t>(steps);
    prov.epsilon = accountant::accountant_epsilon(sigma, q, steps, cfg.delta);
  }
  model.mutable_provenance() = prov;
  return model;
}

}  // namespace detail

/// Trains a classifier. Deterministic for a fixed seed.
inline Model train(const Dataset& data, const NetworkSpec& spec, const TrainConfig& cfg,
                   TrainingMode mode) {
  spec.validate();
  return detail::train_impl(data, spec, cfg, mode, Loss::kSoftmaxCrossEntropy);
}

/// Trains an autoencoder on unlabeled inputs (non-private, MSE loss).
inline Model train_autoencoder(const Tensor& inputs, const NetworkSpec& spec,
                               const TrainConfig& cfg) {
  if (element_count(spec.output_shape()) != element_count(spec.input_shape)) {
    throw ConfigError("autoencoder output must match its input size");
  }
  Dataset d;
  d.inputs = inputs;
  d.labels.assign(inputs.dim(0), 0);
  d.classes = 1;
  return detail::train_impl(d, spec, cfg, TrainingMode::kNonPrivate, Loss::kMeanSquaredError);
}

inline double accuracy(const Model& m, const Dataset& data) {
  std::size_t right = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (predict(m, data.example(i)) == data.labels[i]) ++right;
  }
  return static_cast<double>(right) / static_cast<double>(data.size());
}

inline std::vector<std::size_t> predictions(const Model& m, const Tensor& inputs) {
  std::vector<std::size_t> out(inputs.dim(0));
  parallel_for(out.size(), [&](std::size_t i) { out[i] = predict(m, inputs.row(i)); });
  return out;
}

}  // namespace dpxlab::nn

#endif  // DPXLAB_TRAINING_HPP

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

// Desk-scale study: one non-private and several DP-trained small MLPs on
// synthetic images, exported to a workspace manifest and reported.

#ifndef DPXLAB_EXPERIMENT_HPP
#define DPXLAB_EXPERIMENT_HPP

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpxlab/data.hpp"
#include "dpxlab/explainers.hpp"
#include "dpxlab/manifest.hpp"
#include "dpxlab/network.hpp"
#include "dpxlab/parallel.hpp"
#include "dpxlab/report.hpp"
#include "dpxlab/snapshot.hpp"
#include "dpxlab/training.hpp"

namespace dpxlab::experiment {

using json = nlohmann::json;

struct ExperimentConfig {
  std::size_t n_train = 300;
  std::size_t n_test = 150;
  std::size_t classes = 3;
  std::size_t side = 16;
  double pixel_noise = 0.1;
  std::vector<std::size_t> hidden{32, 32};
  std::vector<double> epsilons{0.4, 1.0, 4.0, 10.0};
  nn::TrainConfig train;  // epsilon_target is overridden per model
  std::vector<explain::Explainer> explainers{
      explain::Explainer::kSaliency, explain::Explainer::kSmoothGrad,
      explain::Explainer::kIntegratedGradients, explain::Explainer::kGradShap};
  explain::ExplainerParams explainer_params;
  std::size_t reference_size = 32;  // grad_shap baselines drawn from training data
  std::string model_id = "mlp";
  report::ReportConfig report;
  std::uint64_t seed = 0;

  ExperimentConfig() {
    train.epochs = 30;
    train.batch_size = 32;
    train.learning_rate = 0.1;
  }

  void validate() const {
    if (n_train < 2 || n_test < 4) throw ConfigError("experiment needs >= 2 train and >= 4 test examples");
    if (epsilons.empty()) throw ConfigError("experiment needs at least one epsilon");
    for (double e : epsilons) {
      if (!(e > 0.0)) throw ConfigError("epsilon values must be > 0");
    }
    if (explainers.empty()) throw ConfigError("experiment needs at least one explainer");
    for (auto e : explainers) {
      if (e == explain::Explainer::kGradCam) {
        throw ConfigError("grad_cam needs a conv layer; the study networks are MLPs");
      }
    }
    if (reference_size == 0) throw ConfigError("reference_size must be >= 1");
    explainer_params.validate();
    report.validate();
  }
};

/// Flatten followed by a ReLU MLP, so attributions keep the image layout.
inline nn::NetworkSpec image_mlp(std::size_t side, const std::vector<std::size_t>& hidden,
                                 std::size_t classes) {
  nn::NetworkSpec s = nn::NetworkSpec::mlp(side * side, hidden, classes);
  s.input_shape = {1, side, side};
  s.layers.insert(s.layers.begin(), nn::LayerSpec::flatten());
  return s;
}

inline std::string private_model_id(const std::string& base, double epsilon) {
  return base + "@eps" + report::cell(epsilon);
}

struct ModelSummary {
  std::string model_id;
  std::optional<double> epsilon;
  std::optional<double> noise_multiplier;
  double test_accuracy = 0.0;
};

struct ExperimentResult {
  std::vector<ModelSummary> models;
  report::ReportFiles report;
};

namespace detail {

inline Tensor labels_tensor(const std::vector<std::size_t>& v) {
  std::vector<double> d(v.begin(), v.end());
  return Tensor::vector(std::move(d));
}

// Writes every per-example artifact of one model and registers it.
inline void export_model(const nn::Model& m, const std::string& id, const nn::Dataset& test,
                         const Tensor& reference, const ExperimentConfig& cfg,
                         const std::filesystem::path& ws, Manifest& manifest) {
  const auto rel = std::filesystem::path("artifacts") / id;
  std::filesystem::create_directories(ws / rel);
  const auto eps = m.provenance().epsilon;
  const std::size_t n = test.size();
  auto add = [&](const std::string& name, const Tensor& t, Role role,
                 std::optional<std::string> layer, std::optional<std::string> explainer) {
    const auto path = rel / (name + ".dpxt");
    write_tensor(t, ws / path);
    ManifestEntry e;
    e.name = id + "/" + name;
    e.path = path;
    e.role = role;
    e.model_id = id;
    e.layer_id = std::move(layer);
    e.explainer_id = std::move(explainer);
    e.epsilon = eps;
    manifest.add(std::move(e));
  };

  const auto pred = nn::predictions(m, test.inputs);
  add("predictions", labels_tensor(pred), Role::kPrediction, std::nullopt, std::nullopt);

  for (std::size_t k = 0; k < cfg.explainers.size(); ++k) {
    const auto ex = cfg.explainers[k];
    // Seeds depend on the explainer and example only, so paired models see
    // the same noise draws.
    const std::uint64_t base = explain::detail::derive_seed(cfg.seed, 1000 + k);
    std::vector<Tensor> maps(n);
    parallel_for(n, [&](std::size_t i) {
      std::mt19937_64 rng(explain::detail::derive_seed(base, i));
      explain::ExplainContext ctx{&reference, id};
      maps[i] = explain::explain(m, ex, test.example(i), pred[i], cfg.explainer_params, rng, ctx)
                    .values;
    });
    add("attr_" + explain::to_string(ex), stack(maps), Role::kAttribution, std::nullopt,
        explain::to_string(ex));
  }

  // Activations and sensitivities of every nonlinearity.
  std::vector<std::vector<Tensor>> acts, sens;
  std::vector<std::string> layer_ids;
  for (std::size_t i = 0; i < m.spec().layers.size(); ++i) {
    if (m.spec().layers[i].kind == nn::LayerKind::kRelu) layer_ids.push_back(m.spec().layer_id(i));
  }
  acts.assign(layer_ids.size(), std::vector<Tensor>(n));
  sens.assign(layer_ids.size(), std::vector<Tensor>(n));
  parallel_for(n, [&](std::size_t i) {
    const auto fr = nn::forward_with_activations(m, test.example(i));
    for (std::size_t l = 0; l < layer_ids.size(); ++l) {
      acts[l][i] = fr.activations[l].value;
      sens[l][i] = nn::layer_sensitivity(m, test.example(i), pred[i], layer_ids[l]);
    }
  });
  for (std::size_t l = 0; l < layer_ids.size(); ++l) {
    add("act_" + layer_ids[l], stack(acts[l]), Role::kActivation, layer_ids[l], std::nullopt);
  }
  for (std::size_t l = 0; l < layer_ids.size(); ++l) {
    add("sens_" + layer_ids[l], stack(sens[l]), Role::kActivation, layer_ids[l],
        std::string(report::kSensitivityId));
  }
}

}  // namespace detail

/// Trains, exports and reports. Deterministic for a fixed config.
inline ExperimentResult run(const std::filesystem::path& workspace, const ExperimentConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(workspace);
  const auto all = data::moon_images(cfg.n_train + cfg.n_test, cfg.classes, cfg.side,
                                     cfg.pixel_noise, explain::detail::derive_seed(cfg.seed, 1));
  const auto [train, test] = data::split(all, cfg.n_train);
  std::vector<std::size_t> ref_idx;
  for (std::size_t i = 0; i < std::min(cfg.reference_size, train.size()); ++i) ref_idx.push_back(i);
  const Tensor reference = train.subset(ref_idx).inputs;

  Manifest manifest(workspace);
  std::filesystem::create_directories(workspace / "data");
  write_tensor(test.inputs, workspace / "data/inputs.dpxt");
  write_tensor(detail::labels_tensor(test.labels), workspace / "data/labels.dpxt");
  manifest.add({"inputs", "data/inputs.dpxt", Role::kInput, "dataset", {}, {}, {}, {}});
  manifest.add({"labels", "data/labels.dpxt", Role::kLabel, "dataset", {}, {}, {}, {}});

  const auto spec = image_mlp(cfg.side, cfg.hidden, cfg.classes);
  ExperimentResult result;
  auto finish = [&](const nn::Model& m, const std::string& id) {
    nn::save_model(m, workspace / "models" / id);
    detail::export_model(m, id, test, reference, cfg, workspace, manifest);
    result.models.push_back({id, m.provenance().epsilon, m.provenance().noise_multiplier,
                             nn::accuracy(m, test)});
  };

  nn::TrainConfig tc = cfg.train;
  tc.seed = explain::detail::derive_seed(cfg.seed, 2);
  finish(nn::train(train, spec, tc, nn::TrainingMode::kNonPrivate), cfg.model_id);
  for (double eps : cfg.epsilons) {
    tc.epsilon_target = eps;
    finish(nn::train(train, spec, tc, nn::TrainingMode::kDp), private_model_id(cfg.model_id, eps));
  }
  save_manifest(manifest, workspace / report::kManifestFile);

  result.report = report::generate_report(workspace, cfg.report);
  json models = json::array();
  for (const auto& s : result.models) {
    models.push_back({{"model_id", s.model_id},
                      {"epsilon", s.epsilon ? json(*s.epsilon) : json(nullptr)},
                      {"noise_multiplier",
                       s.noise_multiplier ? json(*s.noise_multiplier) : json(nullptr)},
                      {"test_accuracy", s.test_accuracy}});
  }
  write_file_atomic(workspace / report::kReportDir / "models.json", models.dump(2) + "\n");
  result.report.files.push_back(workspace / report::kReportDir / "models.json");
  return result;
}

}  // namespace dpxlab::experiment

#endif  // DPXLAB_EXPERIMENT_HPP

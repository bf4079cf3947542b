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

// Synthetic report workspaces built without training.

#ifndef DPXLAB_TESTS_FIXTURES_HPP
#define DPXLAB_TESTS_FIXTURES_HPP

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dpxlab/manifest.hpp"
#include "dpxlab/report.hpp"
#include "dpxlab/tensor.hpp"
#include "test_util.hpp"

namespace dpxlab::testing {

struct FixtureOptions {
  std::size_t n = 12;
  std::size_t classes = 3;
  std::vector<double> epsilons{1.0};
  std::vector<std::string> explainers{"saliency"};
  std::vector<std::string> layers{"02_relu", "04_relu"};
  double attribution_noise = 0.3;
  std::uint64_t seed = 5;
};

inline std::string fixture_private_id(double eps) { return "m@eps" + report::cell(eps); }

/// Writes tensors plus manifest.json under `dir`. Base model "m" predicts
/// the true label; private model k gets every (k+2)-th example wrong.
inline Manifest write_report_fixture(const std::filesystem::path& dir,
                                     const FixtureOptions& o = {}) {
  std::mt19937_64 rng(o.seed);
  Manifest m(dir);
  auto put = [&](const std::string& name, const Tensor& t, Role role, const std::string& model,
                 std::optional<double> eps, std::optional<std::string> layer = {},
                 std::optional<std::string> explainer = {}) {
    const std::string file = name + ".dpxt";
    std::string safe = file;
    for (char& c : safe) {
      if (c == '/' || c == '@') c = '_';
    }
    write_tensor(t, dir / safe);
    m.add({name, safe, role, model, layer, explainer, eps, {}});
  };
  std::vector<double> labels(o.n);
  for (std::size_t i = 0; i < o.n; ++i) labels[i] = static_cast<double>(i % o.classes);
  put("inputs", random_tensor({o.n, 6}, rng), Role::kInput, "dataset", {});
  put("labels", Tensor::vector(labels), Role::kLabel, "dataset", {});

  std::vector<Tensor> base_attr;
  for (std::size_t e = 0; e < o.explainers.size(); ++e) {
    base_attr.push_back(random_tensor({o.n, 2, 3}, rng));
  }
  std::vector<Tensor> base_act;
  for (std::size_t l = 0; l < o.layers.size(); ++l) base_act.push_back(random_tensor({o.n, 5}, rng));

  auto emit = [&](const std::string& id, std::optional<double> eps, std::size_t k) {
    std::vector<double> pred = labels;
    if (eps) {
      for (std::size_t i = 0; i < o.n; i += k + 2) pred[i] = static_cast<double>((i + 1) % o.classes);
    }
    put(id + "/pred", Tensor::vector(pred), Role::kPrediction, id, eps);
    for (std::size_t e = 0; e < o.explainers.size(); ++e) {
      Tensor a = base_attr[e];
      if (eps) {
        std::normal_distribution<double> g(0.0, o.attribution_noise);
        for (double& v : a.values()) v += g(rng);
      }
      if (o.explainers[e] == "saliency") {
        for (double& v : a.values()) v = std::abs(v);
      }
      put(id + "/attr_" + o.explainers[e], a, Role::kAttribution, id, eps, {}, o.explainers[e]);
    }
    for (std::size_t l = 0; l < o.layers.size(); ++l) {
      Tensor a = base_act[l];
      if (eps) {
        std::normal_distribution<double> g(0.0, 0.5);
        for (double& v : a.values()) v += g(rng);
      }
      put(id + "/act_" + o.layers[l], a, Role::kActivation, id, eps, o.layers[l]);
      put(id + "/sens_" + o.layers[l], random_tensor({o.n, 5}, rng), Role::kActivation, id, eps,
          o.layers[l], std::string(report::kSensitivityId));
    }
  };
  emit("m", std::nullopt, 0);
  for (std::size_t k = 0; k < o.epsilons.size(); ++k) {
    emit(fixture_private_id(o.epsilons[k]), o.epsilons[k], k);
  }
  save_manifest(m, dir / report::kManifestFile);
  return m;
}

}  // namespace dpxlab::testing

#endif  // DPXLAB_TESTS_FIXTURES_HPP

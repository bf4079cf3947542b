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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "dpxlab/explainers.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace dpxlab::explain {
namespace {

using nn::LayerSpec;
using nn::Model;
using nn::NetworkSpec;
using testing::random_model;
using testing::random_tensor;

Model linear_model(std::uint64_t seed) { return random_model(NetworkSpec::mlp(5, {}, 3), seed); }

TEST(SaliencyTest, LinearModelGivesAbsoluteWeights) {
  const Model m = linear_model(1);
  std::mt19937_64 rng(1);
  const Tensor s = saliency(m, random_tensor({5}, rng), 2);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(s[i], std::abs(m.weights()[0].at({2, i})));
}

TEST(SaliencyTest, MatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Model m = random_model(NetworkSpec::mlp(6, {8, 8}, 3), 10 + trial);
    const Tensor x = random_tensor({6}, rng);
    const Tensor s = saliency(m, x, 1);
    const Tensor g = nn::input_gradient(m, x, 1);
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_EQ(s[i], std::abs(g[i]));
      Tensor up = x, down = x;
      up[i] += 1e-5;
      down[i] -= 1e-5;
      const double fd = std::abs((nn::logits(m, up)[1] - nn::logits(m, down)[1]) / 2e-5);
      EXPECT_LE(std::abs(fd - s[i]), 1e-4 * std::max({fd, s[i], 1e-6}));
      EXPECT_GE(s[i], 0.0);
    }
  }
}

TEST(SmoothGradTest, ZeroNoiseEqualsGradientExactly) {
  const Model m = random_model(NetworkSpec::mlp(6, {8}, 3), 3);
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({6}, rng);
  for (std::size_t n : {1, 7, 25}) {
    std::mt19937_64 r(5);
    EXPECT_EQ(smoothgrad(m, x, 0, {n, 0.0}, r), nn::input_gradient(m, x, 0));
  }
}

TEST(SmoothGradTest, LinearModelMeanAndSpread) {
  // The gradient of a linear model is constant, so the average is w
  // regardless of noise; spot-check the 1/sqrt(n) claim on the noise itself.
  const Model m = linear_model(4);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({5}, rng);
  const Tensor s = smoothgrad(m, x, 1, {10000, 0.5}, rng);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(s[i], m.weights()[0].at({1, i}), 1e-12);

  // Mean of the injected noise shrinks like 1/sqrt(n): estimate via the
  // deviation of sample means of x + noise for two sample sizes.
  auto spread = [&](std::size_t n) {
    double acc = 0;
    const int reps = 200;
    std::normal_distribution<double> noise(0.0, 1.0);
    std::mt19937_64 r(77);
    for (int k = 0; k < reps; ++k) {
      double mean = 0;
      for (std::size_t j = 0; j < n; ++j) mean += noise(r);
      mean /= static_cast<double>(n);
      acc += mean * mean;
    }
    return std::sqrt(acc / reps);
  };
  EXPECT_NEAR(spread(100) / spread(400), 2.0, 0.3);
}

TEST(SmoothGradTest, FixedSeedIsBitIdentical) {
  const Model m = random_model(NetworkSpec::mlp(6, {8}, 3), 5);
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({6}, rng);
  std::mt19937_64 a(99), b(99), c(100);
  const Tensor sa = smoothgrad(m, x, 2, {}, a);
  set_max_threads(3);
  const Tensor sb = smoothgrad(m, x, 2, {}, b);
  set_max_threads(0);
  EXPECT_EQ(sa, sb);
  EXPECT_FALSE(sa == smoothgrad(m, x, 2, {}, c));
}

TEST(IntegratedGradientsTest, BaselineInputGivesZero) {
  const Model m = random_model(NetworkSpec::mlp(4, {6}, 2), 6);
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({4}, rng);
  const Tensor ig = integrated_gradients(m, x, 0, {20, x});
  for (double v : ig.values()) EXPECT_EQ(v, 0.0);
}

TEST(IntegratedGradientsTest, LinearModelIsExactForAnyStepCount) {
  const Model m = linear_model(7);
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({5}, rng);
  for (std::size_t steps : {1, 3, 50}) {
    const Tensor ig = integrated_gradients(m, x, 0, {steps, std::nullopt});
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(ig[i], x[i] * m.weights()[0].at({0, i}));
  }
}

// On ReLU networks the path integrand jumps at every kink, so the midpoint
// rule converges like 1/m rather than 1/m^2. Check that rate and the limit.
TEST(IntegratedGradientsTest, CompletenessGapConvergesOnRandomMlps) {
  std::mt19937_64 rng(8);
  double gap_200 = 0, gap_2000 = 0, gap_20000 = 0, scale = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const Model m = random_model(NetworkSpec::mlp(6, {10, 10}, 3), 200 + trial);
    const Tensor x = random_tensor({6}, rng);
    const Tensor base = random_tensor({6}, rng, 0.2);
    const double diff = nn::logits(m, x)[1] - nn::logits(m, base)[1];
    auto gap = [&](std::size_t steps) {
      const Tensor ig = integrated_gradients(m, x, 1, {steps, base});
      return std::abs(std::accumulate(ig.values().begin(), ig.values().end(), 0.0) - diff);
    };
    gap_200 += gap(200);
    gap_2000 += gap(2000);
    gap_20000 += gap(20000);
    scale += std::abs(diff);
  }
  EXPECT_LT(gap_200, 0.01 * scale);
  EXPECT_LT(gap_2000, 0.25 * gap_200);
  EXPECT_LT(gap_20000, 0.25 * gap_2000);
}

TEST(IntegratedGradientsTest, BaselineShapeMismatchThrows) {
  const Model m = linear_model(1);
  EXPECT_THROW(integrated_gradients(m, Tensor::zeros({5}), 0, {10, Tensor::zeros({4})}), ShapeError);
  EXPECT_THROW(integrated_gradients(m, Tensor::zeros({5}), 0, {0, std::nullopt}), ConfigError);
}

TEST(GradShapTest, InputAsOnlyReferenceGivesZero) {
  const Model m = random_model(NetworkSpec::mlp(4, {6}, 2), 9);
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({4}, rng);
  const Tensor ref = stack(std::vector<Tensor>{x});
  const Tensor gs = grad_shap(m, x, 0, {}, ref, rng);
  for (double v : gs.values()) EXPECT_EQ(v, 0.0);
}

TEST(GradShapTest, SingleBaselineConvergesToIg) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const Model m = random_model(NetworkSpec::mlp(5, {8, 8}, 2), 300 + trial);
    const Tensor x = random_tensor({5}, rng);
    const Tensor b = random_tensor({5}, rng, 0.3);
    const Tensor gs = grad_shap(m, x, 0, {1, 20000}, stack(std::vector<Tensor>{b}), rng);
    const Tensor ig = integrated_gradients(m, x, 0, {2000, b});
    double num = 0, den = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      num += (gs[i] - ig[i]) * (gs[i] - ig[i]);
      den += ig[i] * ig[i];
    }
    EXPECT_LE(std::sqrt(num), 0.02 * std::sqrt(den)) << trial;
  }
}

TEST(GradShapTest, LinearModelClosedForm) {
  const Model m = linear_model(11);
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({5}, rng);
  const Tensor ref = random_tensor({4, 5}, rng);
  // With every row drawn many times the empirical mean of (x - b) tends
  // to the reference mean; check against the realized draw exactly.
  const Tensor gs = grad_shap(m, x, 2, {4000, 1}, ref, rng);
  std::vector<double> mean_b(5, 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t i = 0; i < 5; ++i) mean_b[i] += ref.at({r, i}) / 4.0;
  }
  double row_sd = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    double var = 0;
    for (std::size_t r = 0; r < 4; ++r) var += std::pow(ref.at({r, i}) - mean_b[i], 2) / 4.0;
    row_sd = std::max(row_sd, std::sqrt(var));
  }
  for (std::size_t i = 0; i < 5; ++i) {
    const double w = m.weights()[0].at({2, i});
    const double want = (x[i] - mean_b[i]) * w;
    // 5 standard errors of a 4000-draw mean.
    EXPECT_NEAR(gs[i], want, 5.0 * row_sd * std::abs(w) / std::sqrt(4000.0) + 1e-12);
  }
}

TEST(GradShapTest, EmptyReferenceThrows) {
  const Model m = linear_model(1);
  std::mt19937_64 rng(1);
  EXPECT_THROW(grad_shap(m, Tensor::zeros({5}), 0, {}, Tensor::zeros({0, 5}), rng), ConfigError);
}

// conv(2 channels) -> flatten -> dense where class 0 averages channel 0
// and class 1 reads nothing.
Model cam_model(std::uint64_t seed) {
  NetworkSpec s;
  s.input_shape = {1, 4, 4};
  s.layers = {LayerSpec::conv2d(2), LayerSpec::flatten(), LayerSpec::dense(32, 2)};
  s.output_classes = 2;
  Model m = random_model(s, seed);
  Tensor& head = m.mutable_weights()[2];
  for (double& v : head.values()) v = 0.0;
  for (std::size_t j = 0; j < 16; ++j) head.at({0, j}) = 1.0 / 16.0;
  return m;
}

TEST(GradCamTest, ConstructedNetworkOracle) {
  const Model m = cam_model(12);
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor({1, 4, 4}, rng);
  const Tensor coarse = grad_cam_coarse(m, x, 0, {});
  const Tensor a = nn::forward_trace(m, x).values[1];
  for (std::size_t s = 0; s < 16; ++s) {
    EXPECT_NEAR(coarse[s], std::max(0.0, a[s] / 16.0), 1e-15);
  }
  // Same resolution: bilinear resize is the identity.
  EXPECT_EQ(grad_cam(m, x, 0, {}), coarse);
}

TEST(GradCamTest, ZeroGradientClassGivesZeroMap) {
  const Model m = cam_model(13);
  std::mt19937_64 rng(13);
  const Tensor cam = grad_cam(m, random_tensor({1, 4, 4}, rng), 1, {});
  for (double v : cam.values()) EXPECT_EQ(v, 0.0);
}

TEST(GradCamTest, NonNegativeAndUpsampled) {
  const Model m = random_model(NetworkSpec::tiny_cnn(1, 8, 8, 3, 4), 14);
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = random_tensor({1, 8, 8}, rng);
    GradCamParams p;
    p.target_layer = "03_relu";
    const Tensor cam = grad_cam(m, x, trial % 3, p);
    EXPECT_EQ(cam.shape(), (Shape{8, 8}));
    for (double v : cam.values()) EXPECT_GE(v, 0.0);
    const Tensor pooled = grad_cam(m, x, trial % 3, {std::string("04_avgpool2d")});
    EXPECT_EQ(pooled.shape(), (Shape{8, 8}));
  }
}

TEST(GradCamTest, NeedsConvLayer) {
  const Model m = linear_model(1);
  EXPECT_THROW(grad_cam_coarse(m, Tensor::zeros({5}), 0, {}), ConfigError);
  const Model cnn = random_model(NetworkSpec::tiny_cnn(1, 4, 4, 2, 2), 1);
  EXPECT_THROW(grad_cam(cnn, Tensor::zeros({1, 4, 4}), 0, {std::string("06_dense")}), ConfigError);
}

TEST(ResizeTest, BilinearHalfPixelOracle) {
  const Tensor in({2, 2}, {0, 1, 2, 3});
  const Tensor out = resize_bilinear(in, 4, 4);
  // Source coordinate of output index j: clamp((j + 0.5) / 2 - 0.5, 0, 1).
  const double coords[4] = {0.0, 0.25, 0.75, 1.0};
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(out.at({r, c}), 2 * coords[r] + coords[c], 1e-15);
    }
  }
}

TEST(ShapleyTest, AdditiveFunctionGivesInputs) {
  std::mt19937_64 rng(15);
  const Tensor x = random_tensor({6}, rng);
  const auto phi = exact_shapley(
      [](const Tensor& t) { return std::accumulate(t.values().begin(), t.values().end(), 0.0); },
      x, Tensor::zeros({6}));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(phi[i], x[i], 1e-12);
}

TEST(ShapleyTest, EfficiencyOnRandomSetFunctions) {
  std::mt19937_64 rng(16);
  std::normal_distribution<double> g;
  for (std::size_t d = 1; d <= 8; ++d) {
    std::vector<double> table(1u << d);
    for (double& v : table) v = g(rng);
    const auto phi = exact_shapley(d, [&](std::uint32_t s) { return table[s]; });
    const double total = std::accumulate(phi.begin(), phi.end(), 0.0);
    EXPECT_NEAR(total, table.back() - table.front(), 1e-10) << d;
  }
}

TEST(ShapleyTest, MatchesPermutationEnumeration) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  for (std::size_t d : {3, 3, 3, 5}) {
    std::vector<double> table(1u << d);
    for (double& v : table) v = g(rng);
    const auto phi = exact_shapley(d, [&](std::uint32_t s) { return table[s]; });
    const auto want = oracle::shapley_by_permutations(d, [&](unsigned s) { return table[s]; });
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(phi[i], want[i], 1e-12);
  }
}

TEST(ShapleyTest, DummyFeatureGetsExactZero) {
  std::mt19937_64 rng(18);
  const Tensor x = random_tensor({5}, rng);
  const auto phi = exact_shapley(
      [](const Tensor& t) { return std::sin(t[0]) * t[1] + t[3] * t[3] + t[4]; }, x,
      Tensor::zeros({5}));
  EXPECT_EQ(phi[2], 0.0);
}

TEST(ShapleyTest, ModelValuesObeyEfficiency) {
  const Model m = random_model(NetworkSpec::mlp(6, {5}, 2), 19);
  std::mt19937_64 rng(19);
  const Tensor x = random_tensor({6}, rng);
  const Tensor base = Tensor::zeros({6});
  const auto f = [&](const Tensor& t) { return nn::logits(m, t)[0]; };
  const auto phi = exact_shapley(f, x, base);
  EXPECT_NEAR(std::accumulate(phi.begin(), phi.end(), 0.0), f(x) - f(base), 1e-10);
}

TEST(ShapleyTest, TooManyFeaturesThrows) {
  EXPECT_THROW(exact_shapley(13, [](std::uint32_t) { return 0.0; }), ScaleError);
  EXPECT_THROW(exact_shapley([](const Tensor&) { return 0.0; }, Tensor::zeros({13}),
                             Tensor::zeros({13})),
               ScaleError);
}

TEST(ExplainTest, DispatchRecordsParams) {
  const Model m = random_model(NetworkSpec::tiny_cnn(1, 6, 6, 2, 2), 20);
  std::mt19937_64 rng(20);
  const Tensor x = random_tensor({1, 6, 6}, rng);
  const Tensor ref = random_tensor({3, 1, 6, 6}, rng);
  ExplainerParams p;
  p.smoothgrad.n_samples = 4;
  p.ig.steps = 8;
  for (Explainer e : {Explainer::kSaliency, Explainer::kSmoothGrad,
                      Explainer::kIntegratedGradients, Explainer::kGradShap,
                      Explainer::kGradCam}) {
    const auto map = explain(m, e, x, 1, p, rng, {&ref, "M"});
    EXPECT_EQ(map.explainer_id, to_string(e));
    EXPECT_EQ(parse_explainer(map.explainer_id), e);
    EXPECT_EQ(map.model_id, "M");
    EXPECT_TRUE(map.values.all_finite());
  }
  EXPECT_EQ(explain(m, Explainer::kGradCam, x, 0, p, rng).params["target_layer"], "02_conv2d");
  p.smoothgrad.n_samples = 0;
  EXPECT_THROW(explain(m, Explainer::kSaliency, x, 0, p, rng), ConfigError);
  EXPECT_THROW(parse_explainer("lime"), ConfigError);
}

}  // namespace
}  // namespace dpxlab::explain

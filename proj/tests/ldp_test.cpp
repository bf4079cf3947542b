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
#include <map>
#include <random>

#include "dpxlab/ldp.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace dpxlab::ldp {
namespace {

Tensor random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, 255);
  Tensor t = Tensor::zeros({h, w});
  for (double& v : t.values()) v = u(rng);
  return t;
}

TEST(QuantizeTest, MinMaxRoundHalfUp) {
  const Tensor q = quantize_heatmap(Tensor({1, 3}, {0.0, 0.5, 1.0}));
  EXPECT_EQ(q.data(), (std::vector<double>{0, 128, 255}));
}

TEST(QuantizeTest, ConstantMapIsZero) {
  const Tensor q = quantize_heatmap(Tensor::filled({3, 3}, 0.7));
  for (double v : q.values()) EXPECT_EQ(v, 0.0);
}

TEST(QuantizeTest, FullRangeIntegerMapIsUnchanged) {
  std::mt19937_64 rng(1);
  Tensor img = random_image(6, 6, rng);
  img[0] = 0;
  img[1] = 255;
  EXPECT_EQ(quantize_heatmap(img), img);
}

TEST(QuantizeTest, ChannelsAreSummed) {
  const Tensor s({2, 1, 2}, {1, 2, 3, 4});
  EXPECT_EQ(to_heatmap(s).data(), (std::vector<double>{4, 6}));
  EXPECT_EQ(to_heatmap(Tensor::zeros({4})).shape(), (Shape{1, 4}));
  EXPECT_THROW(to_heatmap(Tensor::zeros({1, 1, 1, 1})), ShapeError);
}

TEST(PixelizeTest, UnitCellIsIdentity) {
  std::mt19937_64 rng(2);
  const Tensor img = random_image(5, 7, rng);
  EXPECT_EQ(pixelize(img, 1), img);
}

TEST(PixelizeTest, BlockConstantImageIsFixedPoint) {
  const Tensor img({4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  EXPECT_EQ(pixelize(img, 2), img);
}

TEST(PixelizeTest, RaggedCellsAverageActualMembers) {
  Tensor img = Tensor::zeros({5, 5});
  for (std::size_t i = 0; i < 25; ++i) img[i] = static_cast<double>(i);
  const Tensor cells = cell_means(img, 2);
  ASSERT_EQ(cells.shape(), (Shape{3, 3}));
  // Member counts {4,4,2,4,4,2,2,2,1}; means computed by hand.
  const std::vector<double> want{(0 + 1 + 5 + 6) / 4.0,   (2 + 3 + 7 + 8) / 4.0,   (4 + 9) / 2.0,
                                 (10 + 11 + 15 + 16) / 4.0, (12 + 13 + 17 + 18) / 4.0, (14 + 19) / 2.0,
                                 (20 + 21) / 2.0,           (22 + 23) / 2.0,           24.0};
  EXPECT_EQ(cells.data(), want);
  const Tensor px = pixelize(img, 2);
  EXPECT_EQ(px.at({4, 4}), 24.0);
  EXPECT_EQ(px.at({1, 4}), 6.5);
}

TEST(PixelizeTest, Idempotent) {
  std::mt19937_64 rng(3);
  for (std::size_t b : {1, 2, 3, 5, 14}) {
    const Tensor img = random_image(17, 23, rng);
    const Tensor once = pixelize(img, b);
    const Tensor twice = pixelize(once, b);
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(twice[i], once[i], 1e-12);
  }
}

TEST(LdpTest, SensitivityArithmetic) {
  LdpParams p;
  p.epsilon = 4.0;
  EXPECT_NEAR(p.sensitivity(), 255.0 * 16 / 196, 1e-12);
  EXPECT_NEAR(p.sensitivity(), 20.8163265306, 1e-9);
  EXPECT_NEAR(p.scale(), 5.2040816326, 1e-9);
}

TEST(LdpTest, HugeEpsilonReturnsPixelized) {
  std::mt19937_64 rng(4);
  const Tensor img = random_image(28, 28, rng);
  LdpParams p;
  p.epsilon = 1e9;
  const auto out = ldp_apply(img, p, 7);
  const Tensor px = pixelize(img, p.b);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(out.values[i], px[i], 1e-3);
}

TEST(LdpTest, OutputIsCellwiseConstantOnPixelizePartition) {
  std::mt19937_64 rng(5);
  const Tensor img = random_image(20, 17, rng);
  LdpParams p;
  p.b = 6;
  const auto out = ldp_apply(img, p, 9);
  EXPECT_EQ(pixelize(out.values, 6).shape(), out.values.shape());
  for (std::size_t r = 0; r < 20; ++r) {
    for (std::size_t c = 0; c < 17; ++c) {
      EXPECT_EQ(out.values.at({r, c}), out.values.at({(r / 6) * 6, (c / 6) * 6}));
    }
  }
}

TEST(LdpTest, NoiseVarianceIsTwiceScaleSquared) {
  const Tensor img = Tensor::filled({4, 4}, 100.0);
  LdpParams p;
  p.b = 4;
  p.epsilon = 4.0;
  std::mt19937_64 seeds(6);
  double s = 0, s2 = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const double v = ldp_apply(img, p, seeds()).values[0] - 100.0;
    s += v;
    s2 += v * v;
  }
  const double var = s2 / draws - (s / draws) * (s / draws);
  const double t = p.scale();
  EXPECT_NEAR(var, 2 * t * t, 0.02 * 2 * t * t);
  EXPECT_NEAR(s / draws, 0.0, 5 * std::sqrt(2 * t * t / draws));
}

TEST(LdpTest, HistogramRatioRespectsEpsilon) {
  // Neighbouring quantized inputs: n = 16 pixels of one 14 x 14 cell moved
  // from 0 to 255, so the cell means differ by exactly the sensitivity.
  LdpParams p;
  p.epsilon = 1.0;
  const Tensor a = Tensor::zeros({14, 14});
  Tensor b = a;
  for (std::size_t i = 0; i < p.n; ++i) b[i * 7] = 255.0;
  ASSERT_NEAR(cell_means(b, p.b)[0] - cell_means(a, p.b)[0], p.sensitivity(), 1e-12);
  const int draws = 1000000;
  const double width = p.scale() / 4;
  std::map<long, long> ha, hb;
  std::mt19937_64 rng(1);
  for (int i = 0; i < draws; ++i) {
    ++ha[static_cast<long>(std::floor(ldp_apply(a, p, rng).values[0] / width))];
    ++hb[static_cast<long>(std::floor(ldp_apply(b, p, rng).values[0] / width))];
  }
  // Only bins with >= 20000 hits in both runs: the ratio's relative
  // standard error is then below 1%, so 5% slack is about 6 sigma.
  int checked = 0;
  for (const auto& [bin, na] : ha) {
    const long nb = hb.count(bin) ? hb.at(bin) : 0;
    if (na < 20000 || nb < 20000) continue;
    ++checked;
    const double ratio = std::max(static_cast<double>(na) / nb, static_cast<double>(nb) / na);
    EXPECT_LE(ratio, std::exp(p.epsilon) * 1.05) << "bin " << bin;
  }
  EXPECT_GE(checked, 8);
}

TEST(LdpTest, MeanOverSeedsConvergesToPixelized) {
  std::mt19937_64 rng(8);
  const Tensor img = random_image(8, 8, rng);
  LdpParams p;
  p.b = 4;
  p.epsilon = 2.0;
  const Tensor px = pixelize(img, 4);
  std::vector<double> mean(64, 0.0);
  const int runs = 20000;
  for (int k = 0; k < runs; ++k) {
    const auto out = ldp_apply(img, p, 1000 + k);
    for (std::size_t i = 0; i < 64; ++i) mean[i] += out.values[i] / runs;
  }
  const double se = std::sqrt(2.0) * p.scale() / std::sqrt(static_cast<double>(runs));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(mean[i], px[i], 5 * se);
}

TEST(LdpTest, SeededAndValidated) {
  std::mt19937_64 rng(9);
  const Tensor img = random_image(10, 10, rng);
  LdpParams p;
  p.b = 3;
  EXPECT_EQ(ldp_apply(img, p, 5).values, ldp_apply(img, p, 5).values);
  EXPECT_FALSE(ldp_apply(img, p, 5).values == ldp_apply(img, p, 6).values);
  p.epsilon = 0;
  EXPECT_THROW(ldp_apply(img, p, 1), ConfigError);
  p.epsilon = -1;
  EXPECT_THROW(ldp_apply(img, p, 1), ConfigError);
  p.epsilon = 1;
  EXPECT_THROW(ldp_apply(Tensor::filled({3, 3}, 300.0), p, 1), ConfigError);
}

TEST(SsimTest, SelfSimilarityIsOne) {
  std::mt19937_64 rng(10);
  const Tensor img = random_image(32, 32, rng);
  EXPECT_NEAR(ssim(img, img), 1.0, 1e-12);
  const Tensor small = random_image(8, 8, rng);
  const auto r = ssim_detailed(small, small);
  EXPECT_TRUE(r.global_window);
  EXPECT_NEAR(r.value, 1.0, 1e-12);
}

TEST(SsimTest, MatchesStraightLineOracle) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 30.0);
  for (int fixture = 0; fixture < 20; ++fixture) {
    const std::size_t h = 11 + fixture % 7, w = 11 + (fixture * 3) % 13;
    const Tensor a = random_image(h, w, rng);
    Tensor b = a;
    for (double& v : b.values()) v += g(rng) * (fixture % 3);
    if (fixture % 5 == 4) b = random_image(h, w, rng);
    EXPECT_NEAR(ssim(a, b), oracle::ssim_straight_line(a, b, 255.0), 1e-9) << fixture;
  }
}

TEST(SsimTest, SymmetricAndLuminanceSensitive) {
  std::mt19937_64 rng(12);
  const Tensor a = random_image(24, 24, rng);
  const Tensor b = random_image(24, 24, rng);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  Tensor shifted = a;
  for (double& v : shifted.values()) v += 40.0;
  EXPECT_LT(ssim(a, shifted), 1.0);
}

TEST(SsimTest, DecreasesWithNoiseScale) {
  std::mt19937_64 rng(13);
  Tensor img = Tensor::zeros({32, 32});
  for (std::size_t r = 0; r < 32; ++r) {
    for (std::size_t c = 0; c < 32; ++c) img.at({r, c}) = 255.0 * ((r / 8 + c / 8) % 2);
  }
  double prev = 1.0;
  for (double sigma : {5.0, 20.0, 60.0, 150.0}) {
    double mean = 0;
    const int reps = 20;
    for (int k = 0; k < reps; ++k) {
      std::normal_distribution<double> g(0.0, sigma);
      Tensor noisy = img;
      for (double& v : noisy.values()) v += g(rng);
      mean += ssim(img, noisy) / reps;
    }
    EXPECT_LT(mean, prev) << sigma;
    prev = mean;
  }
}

TEST(SsimTest, ShapeMismatchThrows) {
  EXPECT_THROW(ssim(Tensor::zeros({4, 4}), Tensor::zeros({4, 5})), ShapeError);
  EXPECT_THROW(ssim(Tensor::zeros({16}), Tensor::zeros({16})), ShapeError);
}

TEST(EliminationTest, ThresholdArithmetic) {
  EXPECT_FALSE(elimination_test(-0.1).keep);
  EXPECT_FALSE(elimination_test(0.04, 0.05).keep);
  EXPECT_TRUE(elimination_test(0.06, 0.05).keep);
  EXPECT_FALSE(elimination_test(0.05, 0.05).keep);
  EXPECT_TRUE(elimination_test(0.45).keep);
  LdpExplanation e;
  EXPECT_THROW(elimination_test(e), StateError);
  e.ssim_vs_nonprivate = 0.5;
  EXPECT_TRUE(elimination_test(e).keep);
}

}  // namespace
}  // namespace dpxlab::ldp

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

#include "dpxlab/repsim.hpp"

#include <random>

#include "gtest/gtest.h"
#include "oracles.hpp"
#include "test_util.hpp"

namespace dpxlab::repsim {
namespace {

using testing::random_tensor;

oracle::Matrix to_matrix(const Tensor& t) {
  oracle::Matrix m(t.dim(0), std::vector<double>(t.size() / t.dim(0)));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = t[i * m[i].size() + j];
  return m;
}

oracle::Matrix to_matrix(const Gram& g) { return to_matrix(g.tensor()); }

// Random orthogonal matrix by Gram-Schmidt on a gaussian matrix.
Tensor random_orthogonal(std::size_t d, std::mt19937_64& rng) {
  Tensor q = random_tensor({d, d}, rng);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0;
      for (std::size_t r = 0; r < d; ++r) dot += q[r * d + c] * q[r * d + p];
      for (std::size_t r = 0; r < d; ++r) q[r * d + c] -= dot * q[r * d + p];
    }
    double norm = 0;
    for (std::size_t r = 0; r < d; ++r) norm += q[r * d + c] * q[r * d + c];
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < d; ++r) q[r * d + c] /= norm;
  }
  return q;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor c = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < m; ++j) c[i * m + j] += a[i * k + p] * b[p * m + j];
  return c;
}

TEST(GramMatrixTest, LinearOrthonormalRows) {
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(gram_matrix(batch_of(eye), Kernel::kLinear).tensor(), eye);
}

TEST(GramMatrixTest, LinearFixture) {
  const Gram g = gram_matrix(batch_of(Tensor({3, 2}, {1, 0, 0, 1, 1, 1})), Kernel::kLinear);
  EXPECT_EQ(g.v, (std::vector<double>{1, 0, 1, 0, 1, 1, 1, 1, 2}));
}

TEST(GramMatrixTest, RbfUnitDiagonalAndSymmetric) {
  std::mt19937_64 rng(1);
  const Gram g = gram_matrix(batch_of(random_tensor({7, 3}, rng)), Kernel::kRbf);
  for (std::size_t i = 0; i < g.n; ++i) {
    EXPECT_EQ(g(i, i), 1.0);
    for (std::size_t j = 0; j < g.n; ++j) EXPECT_EQ(g(i, j), g(j, i));
  }
}

TEST(GramMatrixTest, RbfIdenticalRowsDegenerate) {
  EXPECT_THROW(gram_matrix(batch_of(Tensor::filled({5, 2}, 3.0)), Kernel::kRbf),
               DegenerateKernelError);
}

TEST(GramMatrixTest, RbfBandwidthIsMedianDistance) {
  // distances: 1, 2, 3 -> median 2
  KernelInfo info;
  gram_matrix(batch_of(Tensor({3, 1}, {0, 1, 3})), Kernel::kRbf, &info);
  EXPECT_DOUBLE_EQ(info.bandwidth, 2.0);
}

TEST(HsicStatisticTest, ConstantVariableIsZero) {
  std::mt19937_64 rng(2);
  const Gram k = gram_matrix(batch_of(random_tensor({6, 2}, rng)), Kernel::kLinear);
  const Gram l = gram_matrix(batch_of(Tensor::filled({6, 2}, 1.5)), Kernel::kLinear);
  EXPECT_NEAR(hsic_statistic(k, l), 0.0, 1e-14);
}

TEST(HsicStatisticTest, SelfDependencePositive) {
  std::mt19937_64 rng(3);
  for (Kernel kernel : {Kernel::kLinear, Kernel::kRbf}) {
    const Gram k = gram_matrix(batch_of(random_tensor({8, 3}, rng)), kernel);
    EXPECT_GT(hsic_statistic(k, k), 0.0);
  }
}

TEST(HsicStatisticTest, MatchesDoubleSumOracle) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    for (Kernel kernel : {Kernel::kLinear, Kernel::kRbf}) {
      const Gram k = gram_matrix(batch_of(random_tensor({4, 3}, rng)), kernel);
      const Gram l = gram_matrix(batch_of(random_tensor({4, 2}, rng)), kernel);
      EXPECT_NEAR(hsic_statistic(k, l), oracle::hsic_double_sum(to_matrix(k), to_matrix(l)),
                  1e-12);
      EXPECT_NEAR(hsic_statistic(k, l), hsic_statistic(l, k), 1e-15);
      EXPECT_GE(hsic_statistic(k, l), -1e-15);
    }
  }
}

TEST(HsicStatisticTest, SizeMismatch) {
  Gram a{2, std::vector<double>(4, 1.0)}, b{3, std::vector<double>(9, 1.0)};
  EXPECT_THROW(hsic_statistic(a, b), ShapeError);
}

TEST(HsicGammaTestTest, IdenticalBatchesRejected) {
  std::mt19937_64 rng(5);
  const auto a = batch_of(random_tensor({100, 3}, rng));
  for (Kernel kernel : {Kernel::kLinear, Kernel::kRbf}) {
    const IndependenceResult r = hsic_gamma_test(a, a, kernel);
    EXPECT_TRUE(r.reject_h0);
    EXPECT_LT(r.p_value, 0.01);
    EXPECT_EQ(r.method, NullMethod::kGamma);
    EXPECT_EQ(r.reject_h0, r.p_value < r.alpha);
  }
}

TEST(HsicGammaTestTest, ConstantBatchNotRejected) {
  std::mt19937_64 rng(6);
  const auto a = batch_of(random_tensor({50, 3}, rng));
  const auto c = batch_of(Tensor::filled({50, 3}, 2.0));
  for (Kernel kernel : {Kernel::kLinear, Kernel::kRbf}) {
    const IndependenceResult r = hsic_gamma_test(a, c, kernel);
    EXPECT_NEAR(r.hsic, 0.0, 1e-12);
    EXPECT_FALSE(r.reject_h0);
    EXPECT_EQ(r.method, NullMethod::kPermutation);
    EXPECT_EQ(r.permutations, 1000u);
  }
}

TEST(HsicGammaTestTest, TinySampleFallsBackToPermutation) {
  // n = 5 makes the variance factor (n-4)(n-5) vanish.
  std::mt19937_64 rng(7);
  const auto a = batch_of(random_tensor({5, 2}, rng));
  const IndependenceResult r = hsic_gamma_test(a, a, Kernel::kLinear);
  EXPECT_EQ(r.method, NullMethod::kPermutation);
  EXPECT_GT(r.p_value, 0.0);
  EXPECT_LE(r.p_value, 1.0);
}

TEST(HsicGammaTestTest, Preconditions) {
  std::mt19937_64 rng(8);
  EXPECT_THROW(hsic_gamma_test(batch_of(random_tensor({3, 2}, rng)),
                               batch_of(random_tensor({3, 2}, rng)), Kernel::kLinear),
               ShapeError);
  EXPECT_THROW(hsic_gamma_test(batch_of(random_tensor({6, 2}, rng)),
                               batch_of(random_tensor({7, 2}, rng)), Kernel::kLinear),
               ShapeError);
}

TEST(HsicGammaTestTest, IndependentRejectionRateRoughlyAlpha) {
  std::mt19937_64 rng(9);
  int rejected = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const auto a = batch_of(random_tensor({100, 2}, rng));
    const auto b = batch_of(random_tensor({100, 2}, rng));
    rejected += hsic_gamma_test(a, b, Kernel::kRbf).reject_h0;
  }
  EXPECT_LE(rejected, trials / 10);
}

TEST(CkaTest, SelfSimilarityIsOne) {
  std::mt19937_64 rng(10);
  const auto a = batch_of(random_tensor({20, 5}, rng));
  EXPECT_NEAR(cka(a, a, Kernel::kLinear), 1.0, 1e-12);
  EXPECT_NEAR(cka(a, a, Kernel::kRbf), 1.0, 1e-12);
}

TEST(CkaTest, LinearOrthogonalAndScaleInvariance) {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({30, 6}, rng);
  const Tensor y = random_tensor({30, 4}, rng);
  const double base = cka(batch_of(x), batch_of(y), Kernel::kLinear);
  const Tensor xq = matmul(x, random_orthogonal(6, rng));
  EXPECT_NEAR(cka(batch_of(x), batch_of(xq), Kernel::kLinear), 1.0, 1e-9);
  EXPECT_NEAR(cka(batch_of(xq), batch_of(y), Kernel::kLinear), base, 1e-9);
  Tensor xs = x;
  for (auto& v : xs.values()) v *= -3.7;
  EXPECT_NEAR(cka(batch_of(x), batch_of(xs), Kernel::kLinear), 1.0, 1e-9);
}

TEST(CkaTest, PermutationInvariant) {
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor({15, 3}, rng);
  const Tensor y = random_tensor({15, 4}, rng);
  std::vector<std::size_t> perm(15);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Tensor> xr, yr;
  for (std::size_t i : perm) {
    xr.push_back(x.row(i));
    yr.push_back(y.row(i));
  }
  for (Kernel kernel : {Kernel::kLinear, Kernel::kRbf}) {
    EXPECT_NEAR(cka(batch_of(x), batch_of(y), kernel),
                cka(batch_of(stack(xr)), batch_of(stack(yr)), kernel), 1e-12);
  }
}

TEST(CkaTest, RbfTranslationByConstantColumn) {
  std::mt19937_64 rng(13);
  const Tensor x = random_tensor({12, 3}, rng);
  const Tensor y = random_tensor({12, 3}, rng);
  auto with_column = [](const Tensor& t, double c) {
    std::vector<double> out;
    for (std::size_t i = 0; i < t.dim(0); ++i) {
      for (std::size_t j = 0; j < t.dim(1); ++j) out.push_back(t[i * t.dim(1) + j]);
      out.push_back(c);
    }
    return Tensor({t.dim(0), t.dim(1) + 1}, out);
  };
  EXPECT_NEAR(cka(batch_of(x), batch_of(y), Kernel::kRbf),
              cka(batch_of(with_column(x, 4.0)), batch_of(with_column(y, -2.0)), Kernel::kRbf),
              1e-12);
}

TEST(CkaTest, ConstantBatchUndefined) {
  std::mt19937_64 rng(14);
  EXPECT_THROW(cka(batch_of(random_tensor({6, 2}, rng)), batch_of(Tensor::filled({6, 2}, 1.0)),
                   Kernel::kLinear),
               UndefinedError);
}

TEST(DckaTest, ConstantConfounderEqualsCka) {
  std::mt19937_64 rng(15);
  const auto a = batch_of(random_tensor({10, 4}, rng));
  const auto b = batch_of(random_tensor({10, 3}, rng));
  const auto c = batch_of(Tensor::filled({10, 2}, 0.25));
  for (Kernel kernel : {Kernel::kLinear, Kernel::kRbf}) {
    const DckaResult r = dcka_detailed(a, b, c, kernel);
    EXPECT_TRUE(r.confounder_constant);
    EXPECT_NEAR(r.value, cka(a, b, kernel), 1e-9);
  }
}

TEST(DckaTest, IdenticalRepresentationsGiveOne) {
  std::mt19937_64 rng(16);
  const auto a = batch_of(random_tensor({10, 4}, rng));
  const auto c = batch_of(random_tensor({10, 5}, rng));
  EXPECT_NEAR(dcka(a, a, c, Kernel::kLinear), 1.0, 1e-12);
  EXPECT_NEAR(dcka(a, a, c, Kernel::kRbf), 1.0, 1e-12);
}

TEST(DckaTest, MatchesStepByStepOracle) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 5; ++t) {
    const Tensor x = random_tensor({8, 3}, rng);
    const Tensor y = random_tensor({8, 4}, rng);
    const Tensor z = random_tensor({8, 2}, rng);
    EXPECT_NEAR(dcka(batch_of(x), batch_of(y), batch_of(z), Kernel::kLinear),
                oracle::dcka_linear(to_matrix(x), to_matrix(y), to_matrix(z)), 1e-10);
  }
}

TEST(DckaTest, RemovesSharedConfounder) {
  // a and b are both noisy copies of the confounder; cka is high but dcka
  // after removing the shared input structure is much lower.
  std::mt19937_64 rng(18);
  const Tensor z = random_tensor({40, 3}, rng);
  Tensor x = z, y = z;
  std::normal_distribution<double> noise(0.0, 0.3);
  for (auto& v : x.values()) v += noise(rng);
  for (auto& v : y.values()) v += noise(rng);
  const double plain = cka(batch_of(x), batch_of(y), Kernel::kLinear);
  const double deconf = dcka(batch_of(x), batch_of(y), batch_of(z), Kernel::kLinear);
  EXPECT_GT(plain, 0.75);
  EXPECT_LT(deconf, plain - 0.3);
}

TEST(AggregateLayersTest, SixLayersThreeClusters) {
  const auto out = aggregate_layer_similarity({{0, 1}, {1, 1}, {2, 2}, {3, 2}, {4, 3}, {5, 3}}, 3);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].median, 1.0);
  EXPECT_EQ(out[1].median, 2.0);
  EXPECT_EQ(out[2].median, 3.0);
}

TEST(AggregateLayersTest, ReferenceClusterSizes) {
  for (auto [layers, clusters, size] :
       {std::tuple{102u, 17u, 6u}, std::tuple{120u, 15u, 8u}, std::tuple{17u, 17u, 1u}}) {
    for (std::size_t s : cluster_sizes(layers, clusters)) EXPECT_EQ(s, size);
  }
  const auto ragged = cluster_sizes(7, 3);
  EXPECT_EQ(ragged, (std::vector<std::size_t>{3, 2, 2}));
}

TEST(AggregateLayersTest, OrdersByDepthAndMedianOfEven) {
  const auto out = aggregate_layer_similarity({{3, 10}, {0, 1}, {2, 7}, {1, 4}}, 1);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0].median, 5.5);
}

TEST(AggregateLayersTest, Errors) {
  EXPECT_THROW(aggregate_layer_similarity({{0, 1}}, 0), ConfigError);
  EXPECT_THROW(aggregate_layer_similarity({{0, 1}}, 2), ConfigError);
}

}  // namespace
}  // namespace dpxlab::repsim

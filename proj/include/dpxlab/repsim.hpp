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

// Kernel statistics over paired representations: HSIC with a gamma-null
// independence test, CKA, deconfounded CKA, and per-cluster medians over
// layers ordered by depth.
//
// All HSIC values are the biased V-statistic (1/n^2) tr(K H L H), so that
// cka(a, a) is exactly one.

#ifndef DPXLAB_REPSIM_HPP
#define DPXLAB_REPSIM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "dpxlab/errors.hpp"
#include "dpxlab/tensor.hpp"

namespace dpxlab::repsim {

enum class Kernel { kLinear, kRbf };

inline std::string to_string(Kernel k) { return k == Kernel::kLinear ? "linear" : "rbf"; }

inline Kernel parse_kernel(const std::string& s) {
  if (s == "linear") return Kernel::kLinear;
  if (s == "rbf") return Kernel::kRbf;
  throw ConfigError("unknown kernel '" + s + "' (expected linear or rbf)");
}

/// Per-example representations, one row per example. Higher-rank values
/// are flattened per example.
struct ActivationBatch {
  Tensor values;
  std::string layer_id;
  std::string model_id;

  std::size_t examples() const { return values.rank() == 0 ? 0 : values.dim(0); }
  std::size_t features() const {
    return examples() == 0 ? 0 : values.size() / examples();
  }
};

inline ActivationBatch batch_of(Tensor values, std::string layer_id = {},
                                std::string model_id = {}) {
  return ActivationBatch{std::move(values), std::move(layer_id), std::move(model_id)};
}

// Row-major n x n square matrix.
struct Gram {
  std::size_t n = 0;
  std::vector<double> v;
  double operator()(std::size_t i, std::size_t j) const { return v[i * n + j]; }
  double& operator()(std::size_t i, std::size_t j) { return v[i * n + j]; }
  Tensor tensor() const { return Tensor({n, n}, v); }
};

namespace detail {

inline void require_rows(const ActivationBatch& b) {
  if (b.values.rank() < 1 || b.examples() == 0) {
    throw ShapeError("activation batch '" + b.layer_id + "' has no examples");
  }
  if (!b.values.all_finite()) {
    throw NonFiniteError("activation batch '" + b.layer_id + "' has non-finite values");
  }
}

inline bool rows_identical(const ActivationBatch& b) {
  const std::size_t n = b.examples(), d = b.features();
  const auto x = b.values.values();
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      if (x[i * d + k] != x[k]) return false;
    }
  }
  return true;
}

inline double median_of(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Median pairwise Euclidean distance between examples.
inline double median_distance(const ActivationBatch& b) {
  detail::require_rows(b);
  const std::size_t n = b.examples(), d = b.features();
  if (n < 2) return 0.0;
  const auto x = b.values.values();
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[i * d + k] - x[j * d + k];
        s += diff * diff;
      }
      dist.push_back(std::sqrt(s));
    }
  }
  return detail::median_of(std::move(dist));
}

struct KernelInfo {
  Kernel kernel = Kernel::kLinear;
  double bandwidth = 0.0;  // rbf only
};

/// Gram matrix under the linear kernel or an RBF kernel whose width is the
/// median pairwise distance.
inline Gram gram_matrix(const ActivationBatch& b, Kernel kernel, KernelInfo* info = nullptr) {
  detail::require_rows(b);
  const std::size_t n = b.examples(), d = b.features();
  const auto x = b.values.values();
  Gram g{n, std::vector<double>(n * n)};
  if (kernel == Kernel::kLinear) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += x[i * d + k] * x[j * d + k];
        g(i, j) = s;
        g(j, i) = s;
      }
    }
    if (info) *info = {kernel, 0.0};
    return g;
  }
  const double width = median_distance(b);
  if (width == 0.0) {
    throw DegenerateKernelError("rbf kernel on '" + b.layer_id +
                                "': median pairwise distance is zero");
  }
  const double denom = 2.0 * width * width;
  for (std::size_t i = 0; i < n; ++i) {
    g(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[i * d + k] - x[j * d + k];
        s += diff * diff;
      }
      g(i, j) = g(j, i) = std::exp(-s / denom);
    }
  }
  if (info) *info = {kernel, width};
  return g;
}

/// Like gram_matrix, but a batch of identical rows under the RBF kernel
/// yields the all-ones matrix (every bandwidth gives that answer).
inline Gram gram_matrix_tolerant(const ActivationBatch& b, Kernel kernel,
                                 KernelInfo* info = nullptr) {
  if (kernel == Kernel::kRbf && detail::rows_identical(b)) {
    if (info) *info = {kernel, 0.0};
    return Gram{b.examples(), std::vector<double>(b.examples() * b.examples(), 1.0)};
  }
  return gram_matrix(b, kernel, info);
}

/// H K H with H = I - (1/n) 11^T.
inline Gram center(const Gram& k) {
  const std::size_t n = k.n;
  std::vector<double> row(n, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[i] += k(i, j);
    grand += row[i];
    row[i] /= static_cast<double>(n);
  }
  grand /= static_cast<double>(n * n);
  Gram c{n, std::vector<double>(n * n)};
  // Symmetric input: column means equal row means.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) c(i, j) = k(i, j) - row[i] - row[j] + grand;
  }
  return c;
}

inline double frobenius_dot(const Gram& a, const Gram& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
  return s;
}

inline void require_square_pair(const Gram& k, const Gram& l) {
  if (k.n != l.n || k.v.size() != k.n * k.n || l.v.size() != l.n * l.n) {
    throw ShapeError("gram sizes differ: " + std::to_string(k.n) + " vs " + std::to_string(l.n));
  }
}

/// (1/n^2) tr(K H L H).
inline double hsic_statistic(const Gram& k, const Gram& l) {
  require_square_pair(k, l);
  const double n = static_cast<double>(k.n);
  return frobenius_dot(center(k), center(l)) / (n * n);
}

inline double hsic_statistic(const Tensor& k, const Tensor& l) {
  if (k.rank() != 2 || k.dim(0) != k.dim(1) || l.rank() != 2 || l.dim(0) != l.dim(1)) {
    throw ShapeError("hsic_statistic expects square gram matrices");
  }
  return hsic_statistic(Gram{k.dim(0), k.data()}, Gram{l.dim(0), l.data()});
}

enum class NullMethod { kGamma, kPermutation };

struct IndependenceResult {
  double hsic = 0.0;       // biased HSIC
  double statistic = 0.0;  // n * hsic
  double p_value = 1.0;
  bool reject_h0 = false;
  Kernel kernel = Kernel::kLinear;
  double alpha = 0.05;
  NullMethod method = NullMethod::kGamma;
  double gamma_shape = 0.0;
  double gamma_scale = 0.0;
  std::size_t permutations = 0;
  double bandwidth_a = 0.0;
  double bandwidth_b = 0.0;
};

struct GammaNull {
  double mean = 0.0;      // of n * HSIC under independence
  double variance = 0.0;  // of n * HSIC under independence
  bool degenerate() const {
    return !(std::isfinite(mean) && std::isfinite(variance) && mean > 0.0 && variance > 0.0);
  }
  double shape() const { return mean * mean / variance; }
  double scale() const { return variance / mean; }
};

/// Moment estimates of the null distribution of n * HSIC from the grams:
/// the mean from kernel self- and cross-similarity averages, the variance
/// from the centered grams' elementwise product.
inline GammaNull fit_gamma_null(const Gram& k, const Gram& l, const Gram& kc, const Gram& lc) {
  const std::size_t n = k.n;
  const double nd = static_cast<double>(n);
  double diag_k = 0, diag_l = 0, off_k = 0, off_l = 0;
  for (std::size_t i = 0; i < n; ++i) {
    diag_k += k(i, i);
    diag_l += l(i, i);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      off_k += k(i, j);
      off_l += l(i, j);
    }
  }
  diag_k /= nd;
  diag_l /= nd;
  off_k /= nd * (nd - 1);
  off_l /= nd * (nd - 1);
  const double mean_hsic = (diag_k - off_k) * (diag_l - off_l) / nd;

  double sum_sq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double t = kc(i, j) * lc(i, j) / 6.0;
      sum_sq += t * t;
    }
  }
  double var_hsic = sum_sq / (nd * (nd - 1));
  var_hsic *= 72.0 * (nd - 4) * (nd - 5) / (nd * (nd - 1) * (nd - 2) * (nd - 3));
  return GammaNull{nd * mean_hsic, nd * nd * var_hsic};
}

/// Permutation p-value for n*HSIC using `shuffles` random relabelings of
/// the second variable. Includes the observed statistic in the count.
inline double hsic_permutation_pvalue(const Gram& kc, const Gram& lc, std::size_t shuffles,
                                      std::mt19937_64& rng) {
  const std::size_t n = kc.n;
  const double observed = frobenius_dot(kc, lc);
  const double tol = 1e-12 * std::max(1.0, std::abs(observed));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t at_least = 0;
  for (std::size_t s = 0; s < shuffles; ++s) {
    std::shuffle(perm.begin(), perm.end(), rng);
    double stat = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* krow = &kc.v[i * n];
      const double* lrow = &lc.v[perm[i] * n];
      for (std::size_t j = 0; j < n; ++j) stat += krow[j] * lrow[perm[j]];
    }
    if (stat >= observed - tol) ++at_least;
  }
  return static_cast<double>(at_least + 1) / static_cast<double>(shuffles + 1);
}

struct TestOptions {
  double alpha = 0.05;
  std::size_t fallback_shuffles = 1000;
  std::uint64_t seed = 0;
};

/// HSIC independence test with a two-parameter gamma approximation of the
/// null; falls back to a permutation test when the fitted null degenerates.
inline IndependenceResult hsic_gamma_test(const ActivationBatch& a, const ActivationBatch& b,
                                          Kernel kernel, const TestOptions& opt = {}) {
  if (a.examples() != b.examples()) {
    throw ShapeError("hsic_gamma_test: batches have " + std::to_string(a.examples()) + " and " +
                     std::to_string(b.examples()) + " examples");
  }
  if (a.examples() < 4) throw ShapeError("hsic_gamma_test needs at least 4 examples");
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");

  IndependenceResult r;
  r.kernel = kernel;
  r.alpha = opt.alpha;
  KernelInfo ia, ib;
  const Gram k = gram_matrix_tolerant(a, kernel, &ia);
  const Gram l = gram_matrix_tolerant(b, kernel, &ib);
  r.bandwidth_a = ia.bandwidth;
  r.bandwidth_b = ib.bandwidth;
  const Gram kc = center(k), lc = center(l);
  const double nd = static_cast<double>(k.n);
  r.hsic = frobenius_dot(kc, lc) / (nd * nd);
  r.statistic = nd * r.hsic;

  const GammaNull null = fit_gamma_null(k, l, kc, lc);
  if (null.degenerate()) {
    std::mt19937_64 rng(opt.seed);
    r.method = NullMethod::kPermutation;
    r.permutations = opt.fallback_shuffles;
    r.p_value = hsic_permutation_pvalue(kc, lc, opt.fallback_shuffles, rng);
  } else {
    r.method = NullMethod::kGamma;
    r.gamma_shape = null.shape();
    r.gamma_scale = null.scale();
    r.p_value = r.statistic <= 0.0
                    ? 1.0
                    : boost::math::gamma_q(r.gamma_shape, r.statistic / r.gamma_scale);
  }
  r.reject_h0 = r.p_value < r.alpha;
  return r;
}

inline double cka_from_centered(const Gram& kc, const Gram& lc) {
  require_square_pair(kc, lc);
  const double kk = frobenius_dot(kc, kc);
  const double ll = frobenius_dot(lc, lc);
  if (kk <= 0.0 || ll <= 0.0) {
    throw UndefinedError("CKA undefined: a representation has zero self-HSIC (constant batch)");
  }
  return frobenius_dot(kc, lc) / std::sqrt(kk * ll);
}

/// HSIC(K, L) / sqrt(HSIC(K, K) HSIC(L, L)).
inline double cka(const ActivationBatch& a, const ActivationBatch& b, Kernel kernel) {
  if (a.examples() != b.examples()) throw ShapeError("cka: batches differ in example count");
  return cka_from_centered(center(gram_matrix_tolerant(a, kernel)),
                           center(gram_matrix_tolerant(b, kernel)));
}

struct DckaResult {
  double value = 0.0;
  double slope_a = 0.0;  // regression coefficient of a's similarities on the confounder's
  double slope_b = 0.0;
  bool confounder_constant = false;
};

namespace detail {

// Residual of OLS of vec(y) on [1, vec(x)]. Returns the slope; constant x
// gives slope zero and removes only the mean.
inline double regress_out(const Gram& y, const Gram& x, Gram& residual, bool* x_constant) {
  const double m = static_cast<double>(y.v.size());
  const double my = std::accumulate(y.v.begin(), y.v.end(), 0.0) / m;
  const double mx = std::accumulate(x.v.begin(), x.v.end(), 0.0) / m;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < y.v.size(); ++i) {
    sxx += (x.v[i] - mx) * (x.v[i] - mx);
    sxy += (x.v[i] - mx) * (y.v[i] - my);
    syy += (y.v[i] - my) * (y.v[i] - my);
  }
  double slope = 0.0;
  const bool constant = !(sxx > 1e-24 * std::max(1.0, syy));
  if (!constant) slope = sxy / sxx;
  if (x_constant) *x_constant = constant;
  const double intercept = my - slope * mx;
  residual.n = y.n;
  residual.v.resize(y.v.size());
  for (std::size_t i = 0; i < y.v.size(); ++i) {
    residual.v[i] = y.v[i] - intercept - slope * x.v[i];
  }
  return slope;
}

}  // namespace detail

/// Deconfounded CKA: each representation's centered similarity matrix is
/// regressed (OLS with intercept) on the confounder's, and the residual
/// matrices are compared by normalized Frobenius alignment.
inline DckaResult dcka_detailed(const ActivationBatch& a, const ActivationBatch& b,
                                const ActivationBatch& confounder, Kernel kernel) {
  if (a.examples() != b.examples() || a.examples() != confounder.examples()) {
    throw ShapeError("dcka: batches differ in example count");
  }
  const Gram kc = center(gram_matrix_tolerant(a, kernel));
  const Gram lc = center(gram_matrix_tolerant(b, kernel));
  const Gram cc = center(gram_matrix_tolerant(confounder, kernel));
  DckaResult out;
  Gram ra, rb;
  bool const_a = false, const_b = false;
  out.slope_a = detail::regress_out(kc, cc, ra, &const_a);
  out.slope_b = detail::regress_out(lc, cc, rb, &const_b);
  out.confounder_constant = const_a && const_b;
  const double aa = frobenius_dot(ra, ra), bb = frobenius_dot(rb, rb);
  if (aa <= 0.0 || bb <= 0.0) {
    throw UndefinedError("dCKA undefined: a residual similarity matrix vanishes");
  }
  out.value = std::clamp(frobenius_dot(ra, rb) / std::sqrt(aa * bb), -1.0, 1.0);
  return out;
}

inline double dcka(const ActivationBatch& a, const ActivationBatch& b,
                   const ActivationBatch& confounder, Kernel kernel) {
  return dcka_detailed(a, b, confounder, kernel).value;
}

struct ClusterMedian {
  std::size_t cluster_index = 0;
  double median = 0.0;
  std::size_t first_layer = 0;  // layer_index of the first member
  std::size_t size = 0;
};

/// Cluster sizes for splitting `n_layers` depth-ordered layers into
/// `n_clusters` contiguous groups; sizes differ by at most one, larger first.
inline std::vector<std::size_t> cluster_sizes(std::size_t n_layers, std::size_t n_clusters) {
  if (n_clusters == 0) throw ConfigError("n_clusters must be at least 1");
  if (n_clusters > n_layers) {
    throw ConfigError("n_clusters (" + std::to_string(n_clusters) + ") exceeds layer count (" +
                      std::to_string(n_layers) + ")");
  }
  std::vector<std::size_t> sizes(n_clusters, n_layers / n_clusters);
  for (std::size_t i = 0; i < n_layers % n_clusters; ++i) ++sizes[i];
  return sizes;
}

inline std::vector<ClusterMedian> aggregate_layer_similarity(
    std::vector<std::pair<std::size_t, double>> per_layer, std::size_t n_clusters) {
  std::stable_sort(per_layer.begin(), per_layer.end(),
                   [](const auto& x, const auto& y) { return x.first < y.first; });
  const auto sizes = cluster_sizes(per_layer.size(), n_clusters);
  std::vector<ClusterMedian> out;
  std::size_t at = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    std::vector<double> values;
    for (std::size_t k = 0; k < sizes[c]; ++k) values.push_back(per_layer[at + k].second);
    out.push_back({c, detail::median_of(values), per_layer[at].first, sizes[c]});
    at += sizes[c];
  }
  return out;
}

}  // namespace dpxlab::repsim

#endif  // DPXLAB_REPSIM_HPP

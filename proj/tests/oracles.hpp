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

// Independent reference computations used only by tests. Each one is a
// direct, slow transcription of a definition and shares no code with the
// library path it checks.

#ifndef DPXLAB_TESTS_ORACLES_HPP
#define DPXLAB_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "dpxlab/tensor.hpp"

namespace dpxlab::oracle {

// Tau-b by exhaustive pair enumeration.
inline double kendall_tau_b(const std::vector<double>& a, const std::vector<double>& b) {
  long concordant = 0, discordant = 0, tie_a_only = 0, tie_b_only = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[i] - a[j];
      const double db = b[i] - b[j];
      if (da == 0 && db == 0) continue;
      if (da == 0) {
        ++tie_a_only;
      } else if (db == 0) {
        ++tie_b_only;
      } else if ((da > 0) == (db > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double n1 = static_cast<double>(concordant + discordant + tie_a_only);
  const double n2 = static_cast<double>(concordant + discordant + tie_b_only);
  return static_cast<double>(concordant - discordant) / std::sqrt(n1 * n2);
}


// Biased HSIC by the expanded triple-sum formula on raw grams:
//   (1/n^2) sum K_ij L_ij + (1/n^4) sum K_ij sum L_kl - (2/n^3) sum K_ij L_ik.
inline double hsic_double_sum(const std::vector<std::vector<double>>& k,
                              const std::vector<std::vector<double>>& l) {
  const double n = static_cast<double>(k.size());
  double t1 = 0, sk = 0, sl = 0, t3 = 0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    for (std::size_t j = 0; j < k.size(); ++j) {
      t1 += k[i][j] * l[i][j];
      sk += k[i][j];
      sl += l[i][j];
      for (std::size_t q = 0; q < k.size(); ++q) t3 += k[i][j] * l[i][q];
    }
  }
  return t1 / (n * n) + sk * sl / (n * n * n * n) - 2.0 * t3 / (n * n * n);
}

using Matrix = std::vector<std::vector<double>>;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

// H K H with an explicit centering matrix.
inline Matrix center_explicit(const Matrix& k) {
  const std::size_t n = k.size();
  Matrix h(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) h[i][j] = (i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(n);
  return matmul(matmul(h, k), h);
}

// Linear-kernel dCKA step by step: X X^T grams, explicit centering, OLS via
// the 2x2 normal equations, then normalized Frobenius alignment.
inline double dcka_linear(const Matrix& x, const Matrix& y, const Matrix& z) {
  auto residual = [](const Matrix& g, const Matrix& c) {
    double s1 = 0, sx = 0, sxx = 0, sy = 0, sxy = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = 0; j < g.size(); ++j) {
        s1 += 1;
        sx += c[i][j];
        sxx += c[i][j] * c[i][j];
        sy += g[i][j];
        sxy += c[i][j] * g[i][j];
      }
    const double det = s1 * sxx - sx * sx;
    const double intercept = (sxx * sy - sx * sxy) / det;
    const double slope = (s1 * sxy - sx * sy) / det;
    Matrix r = g;
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = 0; j < g.size(); ++j) r[i][j] = g[i][j] - intercept - slope * c[i][j];
    return r;
  };
  const Matrix kx = center_explicit(matmul(x, transpose(x)));
  const Matrix ky = center_explicit(matmul(y, transpose(y)));
  const Matrix kz = center_explicit(matmul(z, transpose(z)));
  const Matrix rx = residual(kx, kz), ry = residual(ky, kz);
  double xy = 0, xx = 0, yy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i)
    for (std::size_t j = 0; j < rx.size(); ++j) {
      xy += rx[i][j] * ry[i][j];
      xx += rx[i][j] * rx[i][j];
      yy += ry[i][j] * ry[i][j];
    }
  return xy / std::sqrt(xx * yy);
}

// Shapley values as the mean marginal contribution over all d! feature
// orderings; value(mask) has bit i set when feature i is present.
template <typename Fn>
std::vector<double> shapley_by_permutations(std::size_t d, Fn value) {
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::vector<double> phi(d, 0.0);
  double count = 0;
  do {
    unsigned mask = 0;
    for (std::size_t i : order) {
      const double before = value(mask);
      mask |= 1u << i;
      phi[i] += value(mask) - before;
    }
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  for (double& v : phi) v /= count;
  return phi;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Central differences of f around x, h = 1e-5.
inline std::vector<double> numeric_grad(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f) {
  const double h = 1e-5;
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

// Straight-line SSIM: for every window position, weighted sums computed
// directly over the 2-D window with an explicitly built gaussian kernel.
inline double ssim_straight_line(const Tensor& a, const Tensor& b, double L) {
  const std::size_t h = a.dim(0), w = a.dim(1);
  double kernel[11][11];
  double total = 0;
  for (int i = 0; i < 11; ++i) {
    for (int j = 0; j < 11; ++j) {
      kernel[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / (2 * 1.5 * 1.5));
      total += kernel[i][j];
    }
  }
  const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  double sum = 0;
  int windows = 0;
  for (std::size_t r = 0; r + 11 <= h; ++r) {
    for (std::size_t c = 0; c + 11 <= w; ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double k = kernel[i][j] / total;
          mx += k * a.at({r + i, c + j});
          my += k * b.at({r + i, c + j});
        }
      }
      double vx = 0, vy = 0, cov = 0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double k = kernel[i][j] / total;
          const double dx = a.at({r + i, c + j}) - mx, dy = b.at({r + i, c + j}) - my;
          vx += k * dx * dx;
          vy += k * dy * dy;
          cov += k * dx * dy;
        }
      }
      sum += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  }
  return sum / windows;
}

// Permutation independence test on explicitly centred grams: the statistic
// is sum_ij Kc_ij Lc_ij, and each shuffle relabels the rows and columns of
// the centred second gram (centring commutes with a relabeling).
inline double hsic_permutation_pvalue(const Matrix& k, const Matrix& l, int shuffles,
                                      std::uint64_t seed) {
  const std::size_t n = k.size();
  auto stat = [&](const Matrix& kc, const Matrix& lc) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) s += kc[i][j] * lc[i][j];
    return s;
  };
  const Matrix kc = center_explicit(k);
  const Matrix lc = center_explicit(l);
  const double observed = stat(kc, lc);
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  int hits = 0;
  Matrix lp = lc;
  for (int s = 0; s < shuffles; ++s) {
    for (std::size_t i = n - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i);
      std::swap(perm[i], perm[pick(rng)]);
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) lp[i][j] = lc[perm[i]][perm[j]];
    if (stat(kc, lp) >= observed - 1e-9 * std::abs(observed)) ++hits;
  }
  return (hits + 1.0) / (shuffles + 1.0);
}

}  // namespace dpxlab::oracle

#endif  // DPXLAB_TESTS_ORACLES_HPP

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

// Local-DP release of explanation heatmaps: quantize to 8 bits, pixelize
// into b x b cells, add Laplace noise per cell, and score with SSIM.

#ifndef DPXLAB_LDP_HPP
#define DPXLAB_LDP_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpxlab/errors.hpp"
#include "dpxlab/tensor.hpp"

namespace dpxlab::ldp {

using nlohmann::json;

inline constexpr int kLevels = 256;
inline constexpr int kChannels = 1;

struct LdpParams {
  double epsilon = 1.0;
  std::size_t n = 16;  // maximum number of differing pixels
  std::size_t b = 14;  // cell side in pixels

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("ldp epsilon must be > 0");
    if (n < 1) throw ConfigError("ldp n must be >= 1");
    if (b < 1) throw ConfigError("ldp b must be >= 1");
  }

  /// (k - 1) n c / b^2.
  double sensitivity() const {
    return static_cast<double>(kLevels - 1) * static_cast<double>(n) * kChannels /
           static_cast<double>(b * b);
  }

  /// Laplace scale t = sensitivity / epsilon.
  double scale() const { return sensitivity() / epsilon; }

  json to_json() const {
    return {{"epsilon", epsilon}, {"n", n}, {"b", b}, {"k", kLevels}, {"c", kChannels},
            {"sensitivity", sensitivity()}, {"scale", scale()}};
  }
};

/// Collapses an attribution to a 2-D heatmap: (H, W) passes through,
/// (C, H, W) is summed over channels and a flat (D) vector becomes (1, D).
inline Tensor to_heatmap(const Tensor& s) {
  if (s.rank() == 2) return s;
  if (s.rank() == 1) return s.reshaped({1, s.size()});
  if (s.rank() != 3) {
    throw ShapeError("heatmap needs a (D), (H, W) or (C, H, W) map, got " + shape_string(s.shape()));
  }
  const std::size_t c = s.dim(0), hw = s.dim(1) * s.dim(2);
  Tensor out = Tensor::zeros({s.dim(1), s.dim(2)});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < hw; ++i) out[i] += s[k * hw + i];
  }
  return out;
}

/// Min-max normalization to integers 0..255, rounding half up. Constant
/// maps become all zeros.
inline Tensor quantize_heatmap(const Tensor& s) {
  Tensor img = to_heatmap(s);
  if (!img.all_finite()) throw NonFiniteError("cannot quantize a non-finite map");
  const auto [lo_it, hi_it] = std::minmax_element(img.values().begin(), img.values().end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  for (double& v : img.values()) {
    v = range > 0.0 ? std::floor((v - lo) / range * (kLevels - 1) + 0.5) : 0.0;
  }
  return img;
}

/// Number of cells along an axis of length `len`.
inline std::size_t cell_count(std::size_t len, std::size_t b) { return (len + b - 1) / b; }

/// Mean of each b x b cell (ragged edges averaged over actual members),
/// one value per cell, row-major.
inline Tensor cell_means(const Tensor& img, std::size_t b) {
  if (img.rank() != 2) throw ShapeError("pixelize expects an (H, W) image");
  if (b < 1) throw ConfigError("cell side b must be >= 1");
  const std::size_t h = img.dim(0), w = img.dim(1);
  const std::size_t gh = cell_count(h, b), gw = cell_count(w, b);
  Tensor sums = Tensor::zeros({gh, gw});
  std::vector<double> counts(gh * gw, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t cell = (r / b) * gw + c / b;
      sums[cell] += img[r * w + c];
      counts[cell] += 1.0;
    }
  }
  for (std::size_t i = 0; i < sums.size(); ++i) sums[i] /= counts[i];
  return sums;
}

/// Broadcasts per-cell values back over an (h, w) image.
inline Tensor broadcast_cells(const Tensor& cells, std::size_t h, std::size_t w, std::size_t b) {
  const std::size_t gw = cells.dim(1);
  Tensor out = Tensor::zeros({h, w});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = cells[(r / b) * gw + c / b];
  }
  return out;
}

inline Tensor pixelize(const Tensor& img, std::size_t b) {
  return broadcast_cells(cell_means(img, b), img.dim(0), img.dim(1), b);
}

struct LdpExplanation {
  Tensor values;
  LdpParams params;
  std::optional<double> ssim_vs_nonprivate;
  std::uint64_t seed = 0;

  json to_json() const {
    json j{{"params", params.to_json()}, {"seed", seed}};
    j["ssim_vs_nonprivate"] = ssim_vs_nonprivate ? json(*ssim_vs_nonprivate) : json(nullptr);
    return j;
  }
};

/// Laplace(0, t) draw as t times the difference of two unit exponentials.
inline double laplace(double t, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  return t * (e(rng) - e(rng));
}

/// Pixelize, add one Laplace(Δf/ε) draw per cell, broadcast. No clamping.
inline LdpExplanation ldp_apply(const Tensor& img, const LdpParams& p, std::mt19937_64& rng) {
  p.validate();
  if (img.rank() != 2) throw ShapeError("ldp_apply expects an (H, W) image");
  for (double v : img.values()) {
    if (!(v >= 0.0 && v <= kLevels - 1)) {
      throw ConfigError("ldp_apply expects intensities in 0..255; quantize the map first");
    }
  }
  Tensor cells = cell_means(img, p.b);
  const double t = p.scale();
  for (double& v : cells.values()) v += laplace(t, rng);
  LdpExplanation out;
  out.values = broadcast_cells(cells, img.dim(0), img.dim(1), p.b);
  out.params = p;
  return out;
}

/// Seeded form; the seed is recorded with the explanation.
inline LdpExplanation ldp_apply(const Tensor& img, const LdpParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LdpExplanation out = ldp_apply(img, p, rng);
  out.seed = seed;
  return out;
}

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

struct SsimResult {
  double value = 0.0;
  bool global_window = false;  // image smaller than the window
};

namespace detail {

inline std::vector<double> gaussian_taps() {
  std::vector<double> taps(kSsimWindow);
  const double mid = (kSsimWindow - 1) / 2.0;
  double total = 0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - mid;
    taps[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
    total += taps[i];
  }
  for (double& v : taps) v /= total;
  return taps;
}

// Separable 'valid' filtering of an (h, w) field.
inline std::vector<double> filter_valid(const std::vector<double>& f, std::size_t h,
                                        std::size_t w, const std::vector<double>& taps) {
  const std::size_t k = taps.size(), oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0;
      for (std::size_t j = 0; j < k; ++j) acc += taps[j] * f[r * w + c + j];
      rows[r * ow + c] = acc;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0;
      for (std::size_t i = 0; i < k; ++i) acc += taps[i] * rows[(r + i) * ow + c];
      out[r * ow + c] = acc;
    }
  }
  return out;
}

inline double ssim_term(double mx, double my, double vx, double vy, double cxy, double c1,
                        double c2) {
  return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

}  // namespace detail

/// Mean SSIM over all valid 11x11 gaussian (sigma 1.5) windows.
inline SsimResult ssim_detailed(const Tensor& a, const Tensor& b, double dynamic_range = 255.0) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw ShapeError("ssim needs two equal (H, W) images, got " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  if (!(dynamic_range > 0.0)) throw ConfigError("ssim dynamic range must be > 0");
  const double c1 = std::pow(0.01 * dynamic_range, 2), c2 = std::pow(0.03 * dynamic_range, 2);
  const std::size_t h = a.dim(0), w = a.dim(1), n = a.size();
  if (h < kSsimWindow || w < kSsimWindow) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += a[i];
      my += b[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double vx = 0, vy = 0, cxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      vx += (a[i] - mx) * (a[i] - mx);
      vy += (b[i] - my) * (b[i] - my);
      cxy += (a[i] - mx) * (b[i] - my);
    }
    const double inv = 1.0 / static_cast<double>(n);
    return {detail::ssim_term(mx, my, vx * inv, vy * inv, cxy * inv, c1, c2), true};
  }
  const auto taps = detail::gaussian_taps();
  const std::vector<double>& x = a.data();
  const std::vector<double>& y = b.data();
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = detail::filter_valid(x, h, w, taps);
  const auto my = detail::filter_valid(y, h, w, taps);
  const auto sxx = detail::filter_valid(xx, h, w, taps);
  const auto syy = detail::filter_valid(yy, h, w, taps);
  const auto sxy = detail::filter_valid(xy, h, w, taps);
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    total += detail::ssim_term(mx[i], my[i], sxx[i] - mx[i] * mx[i], syy[i] - my[i] * my[i],
                               sxy[i] - mx[i] * my[i], c1, c2);
  }
  return {total / static_cast<double>(mx.size()), false};
}

inline double ssim(const Tensor& a, const Tensor& b, double dynamic_range = 255.0) {
  return ssim_detailed(a, b, dynamic_range).value;
}

inline constexpr double kDefaultSsimTau = 0.05;

struct EliminationDecision {
  bool keep = false;
  std::string reason;
};

/// Keeps an explanation iff its SSIM against the non-private one exceeds tau.
inline EliminationDecision elimination_test(double ssim_value, double tau = kDefaultSsimTau) {
  if (!std::isfinite(ssim_value)) return {false, "ssim is not finite"};
  if (ssim_value > tau) return {true, "ssim above threshold"};
  if (ssim_value < 0) return {false, "negative ssim"};
  return {false, "ssim at or below threshold (near zero)"};
}

inline EliminationDecision elimination_test(const LdpExplanation& e, double tau = kDefaultSsimTau) {
  if (!e.ssim_vs_nonprivate) throw StateError("ldp explanation has no ssim score yet");
  return elimination_test(*e.ssim_vs_nonprivate, tau);
}

}  // namespace dpxlab::ldp

#endif  // DPXLAB_LDP_HPP

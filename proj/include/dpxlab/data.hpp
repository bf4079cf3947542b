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

// Seeded synthetic datasets.

#ifndef DPXLAB_DATA_HPP
#define DPXLAB_DATA_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "dpxlab/errors.hpp"
#include "dpxlab/tensor.hpp"
#include "dpxlab/training.hpp"

namespace dpxlab::data {

/// Isotropic gaussian blobs: class k is centred at `separation` times a
/// fixed random unit direction. Labels cycle 0, 1, ..., classes-1.
inline nn::Dataset gaussian_blobs(std::size_t n, std::size_t classes, std::size_t dim,
                                  double separation, double spread, std::uint64_t seed) {
  if (n == 0 || classes < 2 || dim == 0) throw ConfigError("blobs need n >= 1, classes >= 2, dim >= 1");
  if (!(spread >= 0.0)) throw ConfigError("spread must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> centres(classes, std::vector<double>(dim));
  for (auto& c : centres) {
    double norm = 0;
    for (double& v : c) {
      v = gauss(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : c) v = separation * v / norm;
  }
  nn::Dataset d;
  d.classes = classes;
  d.inputs = Tensor::zeros({n, dim});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % classes;
    d.labels.push_back(y);
    for (std::size_t j = 0; j < dim; ++j) d.inputs[i * dim + j] = centres[y][j] + spread * gauss(rng);
  }
  return d;
}

/// Single-channel images in [0, 1]: two interleaved arcs (a two-moons
/// layout) drawn as soft strokes. Class 0 gets the upper arc, class 1 the
/// lower one; further classes rotate the pair. Pixel noise is added and
/// clamped.
inline nn::Dataset moon_images(std::size_t n, std::size_t classes, std::size_t side,
                               double noise, std::uint64_t seed) {
  if (n == 0 || classes < 2 || side < 4) throw ConfigError("images need n >= 1, classes >= 2, side >= 4");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  nn::Dataset d;
  d.classes = classes;
  d.inputs = Tensor::zeros({n, 1, side, side});
  const double s = static_cast<double>(side);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % classes;
    d.labels.push_back(y);
    const double rot = std::numbers::pi * static_cast<double>(y / 2) / static_cast<double>(classes);
    const double shift_x = 0.08 * (unit(rng) - 0.5), shift_y = 0.08 * (unit(rng) - 0.5);
    double* img = d.inputs.values().data() + i * side * side;
    for (int k = 0; k < 48; ++k) {
      const double t = std::numbers::pi * k / 47.0;
      double px, py;
      if (y % 2 == 0) {
        px = std::cos(t);
        py = std::sin(t);
      } else {
        px = 1.0 - std::cos(t);
        py = 0.5 - std::sin(t);
      }
      // Map moon coordinates (x in [-1, 2], y in [-0.5, 1]) into the unit square.
      double u = (px + 1.0) / 3.0 - 0.5, v = (py + 0.5) / 1.5 - 0.5;
      const double ru = u * std::cos(rot) - v * std::sin(rot);
      const double rv = u * std::sin(rot) + v * std::cos(rot);
      u = ru + 0.5 + shift_x;
      v = rv + 0.5 + shift_y;
      const double cx = u * (s - 1), cy = (1.0 - v) * (s - 1);
      for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
          const double dx = static_cast<double>(c) - cx, dy = static_cast<double>(r) - cy;
          const double ink = std::exp(-(dx * dx + dy * dy) / (2.0 * 0.6 * 0.6));
          img[r * side + c] = std::max(img[r * side + c], ink);
        }
      }
    }
    for (std::size_t p = 0; p < side * side; ++p) {
      img[p] = std::clamp(img[p] + noise * gauss(rng), 0.0, 1.0);
    }
  }
  return d;
}

/// Tensor of i.i.d. uniform values in [lo, hi).
inline Tensor uniform_noise(const Shape& shape, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.values()) v = u(rng);
  return t;
}

/// First `train` examples and the remainder.
inline std::pair<nn::Dataset, nn::Dataset> split(const nn::Dataset& d, std::size_t train) {
  if (train == 0 || train >= d.size()) throw ConfigError("split point must leave both parts non-empty");
  std::vector<std::size_t> a(train), b(d.size() - train);
  for (std::size_t i = 0; i < train; ++i) a[i] = i;
  for (std::size_t i = train; i < d.size(); ++i) b[i - train] = i;
  return {d.subset(a), d.subset(b)};
}

}  // namespace dpxlab::data

#endif  // DPXLAB_DATA_HPP

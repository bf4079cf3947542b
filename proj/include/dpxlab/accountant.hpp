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

// Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.

#ifndef DPXLAB_ACCOUNTANT_HPP
#define DPXLAB_ACCOUNTANT_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dpxlab/errors.hpp"

namespace dpxlab::accountant {

inline constexpr int kMinOrder = 2;
inline constexpr int kMaxOrder = 64;

namespace detail {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace detail

/// RDP of one step at integer order alpha, via the binomial expansion
///   A = sum_k C(alpha, k) (1-q)^(alpha-k) q^k exp((k^2 - k) / (2 sigma^2)),
///   RDP = log(A) / (alpha - 1).
inline double subsampled_gaussian_rdp(double sigma, double q, int alpha) {
  if (q == 0.0) return 0.0;
  const double neg_inf = -std::numeric_limits<double>::infinity();
  const double log_q = std::log(q);
  const double log_1mq = q == 1.0 ? neg_inf : std::log1p(-q);
  double log_a = neg_inf;
  for (int k = 0; k <= alpha; ++k) {
    const double log_binom = std::lgamma(alpha + 1.0) - std::lgamma(k + 1.0) -
                             std::lgamma(alpha - k + 1.0);
    const double tail = (alpha - k) == 0 ? 0.0 : (alpha - k) * log_1mq;
    const double term = log_binom + k * log_q + tail +
                        (static_cast<double>(k) * k - k) / (2.0 * sigma * sigma);
    log_a = detail::log_add(log_a, term);
  }
  return log_a / (alpha - 1);
}

inline void validate(double sigma, double q, long long steps, double delta) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("noise multiplier must be > 0");
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("sample rate must lie in (0, 1]");
  if (steps < 1) throw ConfigError("step count must be at least 1");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
}

struct EpsilonResult {
  double epsilon = 0.0;
  int order = 0;
};

/// epsilon = min over alpha in {2..64} of T * RDP(alpha) + ln(1/delta) / (alpha - 1).
inline EpsilonResult accountant_epsilon_detailed(double sigma, double q, long long steps,
                                                 double delta) {
  validate(sigma, q, steps, delta);
  EpsilonResult best{std::numeric_limits<double>::infinity(), 0};
  for (int alpha = kMinOrder; alpha <= kMaxOrder; ++alpha) {
    const double eps = static_cast<double>(steps) * subsampled_gaussian_rdp(sigma, q, alpha) +
                       std::log(1.0 / delta) / (alpha - 1);
    if (eps < best.epsilon) best = {eps, alpha};
  }
  return best;
}

inline double accountant_epsilon(double sigma, double q, long long steps, double delta) {
  return accountant_epsilon_detailed(sigma, q, steps, delta).epsilon;
}

/// The smallest epsilon the order grid can certify at this delta, reached
/// as the noise multiplier grows without bound.
inline double epsilon_floor(double delta) { return std::log(1.0 / delta) / (kMaxOrder - 1); }

/// Smallest noise multiplier (to bisection precision) whose epsilon does not
/// exceed `target`. Searches sigma in [sigma_min, sigma_max].
inline double noise_for_epsilon(double target, double q, long long steps, double delta,
                                double sigma_min = 1e-2, double sigma_max = 1e4) {
  if (!(target > 0.0)) throw ConfigError("epsilon target must be > 0");
  validate(sigma_max, q, steps, delta);
  if (accountant_epsilon(sigma_max, q, steps, delta) > target) {
    throw ConfigError("epsilon target " + std::to_string(target) +
                      " unreachable with noise multiplier <= " + std::to_string(sigma_max) +
                      " (grid floor is " + std::to_string(epsilon_floor(delta)) + ")");
  }
  if (accountant_epsilon(sigma_min, q, steps, delta) <= target) return sigma_min;
  double lo = std::log(sigma_min), hi = std::log(sigma_max);
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (accountant_epsilon(std::exp(mid), q, steps, delta) <= target) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return std::exp(hi);
}

}  // namespace dpxlab::accountant

#endif  // DPXLAB_ACCOUNTANT_HPP

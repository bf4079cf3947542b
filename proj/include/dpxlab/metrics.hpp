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

// Measures for comparing an explanation s of a non-private model with the
// explanation s' of its private counterpart on the same input.
//
// The comparison runs in two stages. The disagreement score (DS) is a sign
// sanity check: the percentage of elements whose attribution class
// (positive vs. non-positive) differs. Pairs within the DS threshold then
// get a privacy invariance score (PIS), Kendall's tau-b over elements that
// are positive in both maps.

#ifndef DPXLAB_METRICS_HPP
#define DPXLAB_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpxlab/errors.hpp"
#include "dpxlab/tensor.hpp"

namespace dpxlab::metrics {

struct MetricConfig {
  double ds_threshold = 0.15;  // fraction of elements
  double la_theta = 0.5;

  void validate() const {
    if (!(ds_threshold >= 0.0 && ds_threshold <= 1.0)) {
      throw ConfigError("ds_threshold must lie in [0, 1]");
    }
    if (!(la_theta >= -1.0 && la_theta <= 1.0)) {
      throw ConfigError("la_theta must lie in [-1, 1]");
    }
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("attribution shapes differ: " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

/// Percentage of elements where exactly one of s_i > 0, s'_i > 0 holds.
inline double disagreement_score(const Tensor& s, const Tensor& s_prime) {
  require_same_shape(s, s_prime);
  if (s.size() == 0) throw UndefinedError("disagreement score of an empty map");
  std::size_t mismatched = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((s[i] > 0.0) != (s_prime[i] > 0.0)) ++mismatched;
  }
  return 100.0 * static_cast<double>(mismatched) / static_cast<double>(s.size());
}

namespace detail {

inline std::int64_t tied_pairs(std::span<const double> sorted) {
  std::int64_t total = 0;
  std::size_t run = 1;
  for (std::size_t i = 1; i <= sorted.size(); ++i) {
    if (i < sorted.size() && sorted[i] == sorted[i - 1]) {
      ++run;
    } else {
      total += static_cast<std::int64_t>(run) * static_cast<std::int64_t>(run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

// Sorts `v` ascending and returns the number of strict inversions.
inline std::int64_t merge_count(std::vector<double>& v, std::vector<double>& scratch,
                                std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(v, scratch, lo, mid) + merge_count(v, scratch, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      scratch[k++] = v[j++];
    } else {
      scratch[k++] = v[i++];
    }
  }
  while (i < mid) scratch[k++] = v[i++];
  while (j < hi) scratch[k++] = v[j++];
  std::copy(scratch.begin() + static_cast<std::ptrdiff_t>(lo),
            scratch.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace detail

/// Kendall's tau-b in O(n log n) (Knight's algorithm).
inline double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("kendall_tau: sequence lengths differ (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
  const std::size_t n = a.size();
  if (n < 2) throw UndefinedError("kendall_tau needs at least 2 paired values");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]);
  });

  std::int64_t ties_a = 0;
  std::int64_t ties_joint = 0;
  {
    std::size_t run_a = 1, run_ab = 1;
    for (std::size_t k = 1; k <= n; ++k) {
      const bool same_a = k < n && a[order[k]] == a[order[k - 1]];
      const bool same_ab = same_a && b[order[k]] == b[order[k - 1]];
      if (same_a) {
        ++run_a;
      } else {
        ties_a += static_cast<std::int64_t>(run_a * (run_a - 1) / 2);
        run_a = 1;
      }
      if (same_ab) {
        ++run_ab;
      } else {
        ties_joint += static_cast<std::int64_t>(run_ab * (run_ab - 1) / 2);
        run_ab = 1;
      }
    }
  }

  std::vector<double> sorted_b(n);
  for (std::size_t k = 0; k < n; ++k) sorted_b[k] = b[order[k]];
  std::vector<double> scratch(n);
  const std::int64_t swaps = detail::merge_count(sorted_b, scratch, 0, n);
  const std::int64_t ties_b = detail::tied_pairs(sorted_b);

  const auto total = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  if (ties_a == total || ties_b == total) {
    throw UndefinedError("kendall_tau undefined: one sequence is entirely tied");
  }
  const std::int64_t numerator = total - ties_a - ties_b + ties_joint - 2 * swaps;
  // One sqrt of the product: equal tie counts then give exactly +-1.
  const double denom = std::sqrt(static_cast<double>(total - ties_a) *
                                 static_cast<double>(total - ties_b));
  return std::clamp(static_cast<double>(numerator) / denom, -1.0, 1.0);
}

/// Number of indices positive in both maps.
inline std::size_t common_positive_count(const Tensor& s, const Tensor& s_prime) {
  require_same_shape(s, s_prime);
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] > 0.0 && s_prime[i] > 0.0) ++n;
  }
  return n;
}

/// Kendall's tau-b restricted to the common positive support.
inline double pis(const Tensor& s, const Tensor& s_prime) {
  require_same_shape(s, s_prime);
  std::vector<double> a, b;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] > 0.0 && s_prime[i] > 0.0) {
      a.push_back(s[i]);
      b.push_back(s_prime[i]);
    }
  }
  if (a.size() < 2) {
    throw UndefinedError("PIS undefined: " + std::to_string(a.size()) +
                         " common positive elements (need 2)");
  }
  return kendall_tau(a, b);
}

/// Fraction of positions where the two label sequences agree.
template <typename Label>
double agreement(std::span<const Label> labels_m, std::span<const Label> labels_mprime) {
  if (labels_m.size() != labels_mprime.size()) {
    throw ShapeError("agreement: label sequences differ in length");
  }
  if (labels_m.empty()) throw UndefinedError("agreement of empty label sequences");
  std::size_t same = 0;
  for (std::size_t i = 0; i < labels_m.size(); ++i) {
    if (labels_m[i] == labels_mprime[i]) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(labels_m.size());
}

template <typename Label>
double agreement(const std::vector<Label>& a, const std::vector<Label>& b) {
  return agreement(std::span<const Label>(a), std::span<const Label>(b));
}

inline double acc_ratio(double acc_private, double acc_nonprivate) {
  if (acc_nonprivate == 0.0) throw UndefinedError("acc_ratio: non-private accuracy is zero");
  if (acc_private < 0.0 || acc_nonprivate < 0.0) {
    throw ConfigError("acc_ratio: accuracies must be non-negative");
  }
  return acc_private / acc_nonprivate;
}

struct PairEvaluation {
  double ds = 0.0;  // percent
  std::optional<double> pis;
  std::size_t n_pos_common = 0;
  bool passed_ds = false;
};

inline PairEvaluation evaluate_pair(const Tensor& s, const Tensor& s_prime,
                                    const MetricConfig& cfg) {
  PairEvaluation out;
  out.ds = disagreement_score(s, s_prime);
  out.passed_ds = out.ds <= 100.0 * cfg.ds_threshold;
  out.n_pos_common = common_positive_count(s, s_prime);
  if (out.passed_ds && out.n_pos_common >= 2) {
    try {
      out.pis = pis(s, s_prime);
    } catch (const UndefinedError&) {
      // all-tied support; stays undefined
    }
  }
  return out;
}

struct LaOutcome {
  std::optional<double> pis_avg;  // empty when eliminated
  double ds_pass_fraction = 0.0;
  std::size_t n_pairs = 0;
  std::size_t n_defined = 0;
  bool eliminated = false;
  bool la_satisfied = false;
};

/// Aggregates pair evaluations for one explainer. An explainer with no
/// DS-passing pair carrying a defined PIS is eliminated rather than
/// scored.
inline LaOutcome evaluate_la(std::span<const PairEvaluation> pairs, const MetricConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw UndefinedError("evaluate_la: no pairs");
  LaOutcome out;
  out.n_pairs = pairs.size();
  std::size_t passed = 0;
  double sum = 0.0;
  for (const auto& p : pairs) {
    if (p.passed_ds) ++passed;
    if (p.passed_ds && p.pis) {
      sum += *p.pis;
      ++out.n_defined;
    }
  }
  out.ds_pass_fraction = static_cast<double>(passed) / static_cast<double>(pairs.size());
  if (out.n_defined == 0) {
    out.eliminated = true;
    return out;
  }
  out.pis_avg = sum / static_cast<double>(out.n_defined);
  out.la_satisfied = *out.pis_avg >= cfg.la_theta;
  return out;
}

inline LaOutcome evaluate_la(const std::vector<PairEvaluation>& pairs, const MetricConfig& cfg) {
  return evaluate_la(std::span<const PairEvaluation>(pairs), cfg);
}

}  // namespace dpxlab::metrics

#endif  // DPXLAB_METRICS_HPP

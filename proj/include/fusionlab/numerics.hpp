// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace fusionlab {

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Numerically stable in-place softmax with temperature.
inline void softmax_inplace(std::span<double> v, double temperature = 1.0) {
  double max_val = -std::numeric_limits<double>::infinity();
  for (double& x : v) {
    x /= temperature;
    max_val = std::max(max_val, x);
  }
  double total = 0.0;
  for (double& x : v) {
    x = std::exp(x - max_val);
    total += x;
  }
  for (double& x : v) x /= total;
}

inline std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0) {
  std::vector<double> out(logits.begin(), logits.end());
  softmax_inplace(out, temperature);
  return out;
}

inline double log_sum_exp(std::span<const double> v) {
  double max_val = -std::numeric_limits<double>::infinity();
  for (double x : v) max_val = std::max(max_val, x);
  double total = 0.0;
  for (double x : v) total += std::exp(x - max_val);
  return max_val + std::log(total);
}

}  // namespace fusionlab

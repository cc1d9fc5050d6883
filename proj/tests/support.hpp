#pragma once

// Shared helpers for the test and acceptance suites: seeded random simplex
// vectors and the synthetic datasets used by the experiment-style checks.

#include <cmath>
#include <random>
#include <vector>

#include "wdl/grid.hpp"

namespace testutil {

using wdl::Vec;

inline Vec random_simplex(std::mt19937_64& rng, int n, double floor = 0.05) {
  std::uniform_real_distribution<double> unif(floor, 1.0);
  Vec v(static_cast<std::size_t>(n));
  double s = 0.0;
  for (double& x : v) {
    x = unif(rng);
    s += x;
  }
  for (double& x : v) x /= s;
  return v;
}

inline Vec random_positive(std::mt19937_64& rng, int n, double lo = 0.1, double hi = 1.0) {
  std::uniform_real_distribution<double> unif(lo, hi);
  Vec v(static_cast<std::size_t>(n));
  for (double& x : v) x = unif(rng);
  return v;
}

/// Discretized Gaussian bump on an n-bin 1-D grid, normalized.
inline Vec gaussian_bump(int n, double mean, double sigma) {
  Vec v(static_cast<std::size_t>(n));
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    double d = (i - mean) / sigma;
    v[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d);
    s += v[static_cast<std::size_t>(i)];
  }
  for (double& x : v) x /= s;
  return v;
}

/// M translated Gaussians (sigma bins wide) spread across an n-bin grid.
inline std::vector<Vec> translated_gaussians(int n, int m, double sigma) {
  std::vector<Vec> data;
  const double lo = 3.0 * sigma;
  const double hi = n - 1 - 3.0 * sigma;
  for (int i = 0; i < m; ++i) {
    double mean = m == 1 ? (lo + hi) / 2.0
                         : lo + (hi - lo) * static_cast<double>(i) / (m - 1);
    data.push_back(gaussian_bump(n, mean, sigma));
  }
  return data;
}

/// Bimodal datapoints on a grid split into three equal parts: the middle
/// third is empty, each mode is a truncated Gaussian whose mean is drawn
/// from every other admissible position in one of the outer thirds.
inline std::vector<Vec> multimodal_dataset(std::mt19937_64& rng, int n, int m,
                                           double sigma) {
  const int third = n / 3;
  std::vector<int> candidates;
  int margin = static_cast<int>(std::ceil(2.0 * sigma));
  for (int pos = margin; pos < third - margin; pos += 2) {
    candidates.push_back(pos);               // left third
    candidates.push_back(2 * third + pos);   // right third
  }
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  std::vector<Vec> data;
  for (int i = 0; i < m; ++i) {
    Vec v(static_cast<std::size_t>(n), 0.0);
    for (int mode = 0; mode < 2; ++mode) {
      int mean = candidates[pick(rng)];
      int lo = (mean < third) ? 0 : 2 * third;
      int hi = (mean < third) ? third : n;  // truncate to the mode's third
      for (int b = lo; b < hi; ++b) {
        double d = (b - mean) / sigma;
        v[static_cast<std::size_t>(b)] += std::exp(-0.5 * d * d);
      }
    }
    double s = wdl::vec_sum(v);
    for (double& x : v) x /= s;
    data.push_back(std::move(v));
  }
  return data;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

/// Max elementwise deviation between two gradients after removing the
/// additive constant both are only defined up to on the simplex tangent,
/// relative to the reference's scale.
inline double centered_rel_linf(const Vec& got, const Vec& want) {
  double mg = wdl::vec_mean(got), mw = wdl::vec_mean(want);
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    err = std::max(err, std::abs((got[i] - mg) - (want[i] - mw)));
    scale = std::max(scale, std::abs(want[i] - mw));
  }
  return err / std::max(scale, 1e-12);
}

}  // namespace testutil

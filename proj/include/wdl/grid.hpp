#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "wdl/errors.hpp"

namespace wdl {

using Vec = std::vector<double>;

/// Uniform rectangular grid. Bin coordinates along each axis are cell
/// centers at integer multiples of the axis spacing.
struct Grid {
  std::vector<int> dims;        // axis lengths; 1-D: {n}, 2-D: {rows, cols}
  std::vector<double> spacing;  // per axis, defaults to 1.0

  Grid() = default;
  explicit Grid(std::vector<int> d, std::vector<double> s = {})
      : dims(std::move(d)), spacing(std::move(s)) {
    if (dims.empty()) throw validation_error("grid: no axes");
    for (int n : dims)
      if (n < 1) throw validation_error("grid: axis length must be >= 1");
    if (spacing.empty()) spacing.assign(dims.size(), 1.0);
    if (spacing.size() != dims.size())
      throw validation_error("grid: spacing/dims size mismatch");
    for (double h : spacing)
      if (!(h > 0.0)) throw validation_error("grid: spacing must be positive");
  }

  int size() const {
    int n = 1;
    for (int d : dims) n *= d;
    return n;
  }
  int axes() const { return static_cast<int>(dims.size()); }

  bool operator==(const Grid& o) const {
    return dims == o.dims && spacing == o.spacing;
  }
};

inline double vec_sum(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

inline double vec_dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double vec_mean(const Vec& v) {
  return v.empty() ? 0.0 : vec_sum(v) / static_cast<double>(v.size());
}

inline double linf_diff(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double l1_diff(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline int argmax(const Vec& v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

/// Nonnegative mass vector on a grid, summing to one.
class Histogram {
public:
  Histogram(Grid grid, Vec values) : grid_(std::move(grid)), values_(std::move(values)) {
    if (static_cast<int>(values_.size()) != grid_.size())
      throw validation_error("histogram: length does not match grid");
    double s = 0.0;
    for (double x : values_) {
      if (!std::isfinite(x) || x < 0.0)
        throw validation_error("histogram: entries must be finite and >= 0");
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-10)
      throw validation_error("histogram: mass " + std::to_string(s) + " is not 1");
  }

  /// Normalizes raw masses onto the simplex. With jitter_eps > 0, adds
  /// jitter_eps to every bin before normalizing so no bin is exactly zero
  /// (required by the KL loss, recommended for all losses).
  static Histogram normalized(Grid grid, Vec raw, double jitter_eps = 0.0) {
    if (static_cast<int>(raw.size()) != grid.size())
      throw validation_error("histogram: length does not match grid");
    for (double x : raw)
      if (!std::isfinite(x) || x < 0.0)
        throw validation_error("histogram: entries must be finite and >= 0");
    if (jitter_eps > 0.0)
      for (double& x : raw) x += jitter_eps;
    double s = vec_sum(raw);
    if (!(s > 0.0)) throw validation_error("histogram: total mass is zero");
    for (double& x : raw) x /= s;
    return Histogram(std::move(grid), std::move(raw));
  }

  const Grid& grid() const { return grid_; }
  const Vec& values() const { return values_; }
  int size() const { return static_cast<int>(values_.size()); }
  double operator[](int i) const { return values_[static_cast<std::size_t>(i)]; }

private:
  Grid grid_;
  Vec values_;
};

}  // namespace wdl

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "wdl/cost.hpp"
#include "wdl/grid.hpp"

namespace wdl {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Sign/log-magnitude representation of a real vector, used by the
/// log-domain backward loops where intermediates can be negative.
struct SignedLog {
  std::vector<int8_t> sign;  // -1, 0, +1
  Vec logabs;                // log|x|, -inf where x == 0

  static SignedLog from_linear(const Vec& v) {
    SignedLog s;
    s.sign.resize(v.size());
    s.logabs.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] == 0.0) {
        s.sign[i] = 0;
        s.logabs[i] = kNegInf;
      } else {
        s.sign[i] = v[i] > 0.0 ? 1 : -1;
        s.logabs[i] = std::log(std::abs(v[i]));
      }
    }
    return s;
  }

  Vec to_linear() const {
    Vec v(logabs.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = sign[i] == 0 ? 0.0 : sign[i] * std::exp(logabs[i]);
    return v;
  }
};

/// Gibbs kernel K = exp(-C/gamma). Squared-Euclidean costs on a grid keep
/// one small factor per axis and apply as a separable convolution; explicit
/// dense costs keep the full matrix (grids up to kDenseLimit bins).
///
/// apply() places no sign restriction on the input: the backward recursions
/// apply K to signed vectors.
class Kernel {
public:
  static Kernel build(CostSpec cost, double gamma) {
    if (!(gamma > 0.0)) throw parameter_error("kernel: gamma must be > 0");
    Kernel k;
    k.gamma_ = gamma;
    k.cost_ = std::move(cost);
    k.cost_.validate();
    const Grid& g = k.cost_.grid;
    if (k.cost_.kind == CostKind::SquaredEuclideanOnGrid) {
      k.factors_.resize(g.dims.size());
      k.log_factors_.resize(g.dims.size());
      for (int a = 0; a < g.axes(); ++a) {
        const int n = g.dims[static_cast<std::size_t>(a)];
        const double h = g.spacing[static_cast<std::size_t>(a)];
        Vec f(static_cast<std::size_t>(n) * n), lf(static_cast<std::size_t>(n) * n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            double d = (i - j) * h;
            lf[static_cast<std::size_t>(i) * n + j] = -d * d / gamma;
            f[static_cast<std::size_t>(i) * n + j] = std::exp(-d * d / gamma);
          }
        k.factors_[static_cast<std::size_t>(a)] = std::move(f);
        k.log_factors_[static_cast<std::size_t>(a)] = std::move(lf);
      }
    } else {
      const int n = g.size();
      if (n > kDenseLimit)
        throw validation_error("kernel: dense kernels limited to " +
                               std::to_string(kDenseLimit) +
                               " bins; use a separable cost");
      k.dense_.resize(static_cast<std::size_t>(n) * n);
      k.dense_log_.resize(static_cast<std::size_t>(n) * n);
      for (std::size_t i = 0; i < k.dense_.size(); ++i) {
        k.dense_log_[i] = -k.cost_.matrix[i] / gamma;
        k.dense_[i] = std::exp(k.dense_log_[i]);
      }
    }
    return k;
  }

  double gamma() const { return gamma_; }
  const CostSpec& cost() const { return cost_; }
  const Grid& grid() const { return cost_.grid; }
  int size() const { return cost_.grid.size(); }
  bool separable() const { return dense_.empty(); }

  Vec apply(const Vec& in, bool transpose = false) const {
    check_len(in);
    Vec out(in.size());
    if (!separable()) {
      dense_matvec(dense_, size(), in, out, transpose);
      return out;
    }
    Vec cur = in;
    for (int a = 0; a < grid().axes(); ++a) {
      axis_pass(a, factors_[static_cast<std::size_t>(a)], cur, out, transpose, false);
      cur = out;
    }
    return out;
  }

  /// K_LS: log(K exp(v)) via shifted log-sum-exp, one pass per axis.
  Vec log_apply(const Vec& log_in, bool transpose = false) const {
    check_len(log_in);
    Vec out(log_in.size());
    if (!separable()) {
      dense_lse(dense_log_, size(), log_in, out, transpose);
      return out;
    }
    Vec cur = log_in;
    for (int a = 0; a < grid().axes(); ++a) {
      axis_pass(a, log_factors_[static_cast<std::size_t>(a)], cur, out, transpose, true);
      cur = out;
    }
    return out;
  }

  /// Signed K_LS: the same contraction for vectors carried as
  /// (sign, log|value|); signs propagate through each axis pass.
  SignedLog log_apply_signed(const SignedLog& in, bool transpose = false) const {
    check_len(in.logabs);
    SignedLog out;
    out.sign.resize(in.sign.size());
    out.logabs.resize(in.logabs.size());
    if (!separable()) {
      signed_lse_lines(dense_log_, size(), 1, 1, in, out, transpose);
      return out;
    }
    SignedLog cur = in;
    for (int a = 0; a < grid().axes(); ++a) {
      const Grid& g = grid();
      const int n = g.dims[static_cast<std::size_t>(a)];
      int stride = 1;
      for (int b = a + 1; b < g.axes(); ++b) stride *= g.dims[static_cast<std::size_t>(b)];
      signed_lse_lines(log_factors_[static_cast<std::size_t>(a)], n,
                       g.size() / (n * stride), stride, cur, out, transpose);
      cur = out;
    }
    return out;
  }

  /// Dense N x N kernel matrix; materialized on demand for separable
  /// kernels (tests and transport-plan extraction, small grids only).
  const Vec& dense_matrix() const {
    if (!dense_.empty()) return dense_;
    if (dense_cache_.empty()) {
      const int n = size();
      if (n > kDenseLimit)
        throw validation_error("kernel: grid too large to materialize densely");
      Vec c = build_cost(cost_);
      dense_cache_.resize(c.size());
      for (std::size_t i = 0; i < c.size(); ++i)
        dense_cache_[i] = std::exp(-c[i] / gamma_);
    }
    return dense_cache_;
  }

private:
  Kernel() = default;

  void check_len(const Vec& v) const {
    if (static_cast<int>(v.size()) != size())
      throw validation_error("kernel: vector length does not match grid");
  }

  static void dense_matvec(const Vec& m, int n, const Vec& in, Vec& out, bool transpose) {
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) {
        std::size_t idx = transpose ? static_cast<std::size_t>(j) * n + i
                                    : static_cast<std::size_t>(i) * n + j;
        s += m[idx] * in[static_cast<std::size_t>(j)];
      }
      out[static_cast<std::size_t>(i)] = s;
    }
  }

  // Terms this far below the row maximum are invisible even against the
  // 1e-12 exactness contract (n * e^-45 < 2e-16 relative for n <= 4096).
  static constexpr double kLseCutoff = 45.0;

  static void dense_lse(const Vec& lm, int n, const Vec& in, Vec& out, bool transpose) {
    Vec row(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      double mx = kNegInf;
      for (int j = 0; j < n; ++j) {
        std::size_t idx = transpose ? static_cast<std::size_t>(j) * n + i
                                    : static_cast<std::size_t>(i) * n + j;
        double t = lm[idx] + in[static_cast<std::size_t>(j)];
        row[static_cast<std::size_t>(j)] = t;
        if (t > mx) mx = t;
      }
      if (mx == kNegInf) {
        out[static_cast<std::size_t>(i)] = kNegInf;
        continue;
      }
      double s = 0.0;
      const double lo = mx - kLseCutoff;
      for (int j = 0; j < n; ++j)
        if (row[static_cast<std::size_t>(j)] >= lo)
          s += std::exp(row[static_cast<std::size_t>(j)] - mx);
      out[static_cast<std::size_t>(i)] = std::log(s) + mx;
    }
  }

  // Runs one factor (linear matvec or shifted log-sum-exp) along every
  // grid line of the given axis.
  void axis_pass(int axis, const Vec& f, const Vec& in, Vec& out, bool transpose,
                 bool lse) const {
    const Grid& g = grid();
    const int n = g.dims[static_cast<std::size_t>(axis)];
    int stride = 1;
    for (int a = axis + 1; a < g.axes(); ++a) stride *= g.dims[static_cast<std::size_t>(a)];
    const int outer = g.size() / (n * stride);
    Vec line_in(static_cast<std::size_t>(n)), line_out(static_cast<std::size_t>(n));
    for (int o = 0; o < outer; ++o)
      for (int r = 0; r < stride; ++r) {
        const std::size_t base = static_cast<std::size_t>(o) * n * stride + r;
        for (int k = 0; k < n; ++k)
          line_in[static_cast<std::size_t>(k)] = in[base + static_cast<std::size_t>(k) * stride];
        if (lse)
          dense_lse(f, n, line_in, line_out, transpose);
        else
          dense_matvec(f, n, line_in, line_out, transpose);
        for (int k = 0; k < n; ++k)
          out[base + static_cast<std::size_t>(k) * stride] = line_out[static_cast<std::size_t>(k)];
      }
  }

  // Signed shifted log-sum-exp over `outer * stride` lines of length n.
  static void signed_lse_lines(const Vec& lf, int n, int outer, int stride,
                               const SignedLog& in, SignedLog& out, bool transpose) {
    Vec row(static_cast<std::size_t>(n));
    for (int o = 0; o < outer; ++o)
      for (int r = 0; r < stride; ++r) {
        const std::size_t base = static_cast<std::size_t>(o) * n * stride + r;
        for (int i = 0; i < n; ++i) {
          double mx = kNegInf;
          for (int j = 0; j < n; ++j) {
            std::size_t src = base + static_cast<std::size_t>(j) * stride;
            if (in.sign[src] == 0) {
              row[static_cast<std::size_t>(j)] = kNegInf;
              continue;
            }
            std::size_t idx = transpose ? static_cast<std::size_t>(j) * n + i
                                        : static_cast<std::size_t>(i) * n + j;
            double t = lf[idx] + in.logabs[src];
            row[static_cast<std::size_t>(j)] = t;
            if (t > mx) mx = t;
          }
          double s = 0.0;
          if (mx != kNegInf) {
            const double lo = mx - kLseCutoff;
            for (int j = 0; j < n; ++j) {
              if (row[static_cast<std::size_t>(j)] < lo) continue;
              std::size_t src = base + static_cast<std::size_t>(j) * stride;
              s += in.sign[src] * std::exp(row[static_cast<std::size_t>(j)] - mx);
            }
          }
          std::size_t dst = base + static_cast<std::size_t>(i) * stride;
          if (s == 0.0) {
            out.sign[dst] = 0;
            out.logabs[dst] = kNegInf;
          } else {
            out.sign[dst] = s > 0.0 ? 1 : -1;
            out.logabs[dst] = std::log(std::abs(s)) + mx;
          }
        }
      }
  }

  double gamma_ = 1.0;
  CostSpec cost_;
  Vec dense_;      // explicit-dense kernels only
  Vec dense_log_;  // -C/gamma for the dense case
  std::vector<Vec> factors_;      // per-axis kernel factors
  std::vector<Vec> log_factors_;  // per-axis -cost/gamma
  mutable Vec dense_cache_;       // lazily materialized for separable kernels
};

inline Kernel build_kernel(CostSpec cost, double gamma) {
  return Kernel::build(std::move(cost), gamma);
}

}  // namespace wdl

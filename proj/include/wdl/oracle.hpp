#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "wdl/grid.hpp"

// Reference implementations used only by tests and acceptance runs. They
// deliberately share no solver code with the rest of the library.

namespace wdl::oracle {

struct FDSpec {
  double step = 1e-6;
  // When differentiating along the simplex, perturb along e_i - (1/n) 1 so
  // the probe stays on the mass-preserving tangent; the result equals the
  // mean-centered gradient. Off for unconstrained (logit-space) probes.
  bool tangent_projection = false;
};

/// Central finite differences of a scalar function, one coordinate (or
/// tangent direction) at a time.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& at,
                       const FDSpec& spec = {}) {
  if (!(spec.step > 0.0)) throw parameter_error("fd: step must be > 0");
  const double h = spec.step;
  const std::size_t n = at.size();
  Vec g(n);
  Vec x = at;
  for (std::size_t i = 0; i < n; ++i) {
    double fp, fm;
    if (spec.tangent_projection) {
      const double shift = h / static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j) x[j] = at[j] - shift;
      x[i] = at[i] + h - shift;
      fp = f(x);
      for (std::size_t j = 0; j < n; ++j) x[j] = at[j] + shift;
      x[i] = at[i] - h + shift;
      fm = f(x);
      x = at;
    } else {
      x[i] = at[i] + h;
      fp = f(x);
      x[i] = at[i] - h;
      fm = f(x);
      x[i] = at[i];
    }
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw domain_error("fd: function returned a non-finite value");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

struct DualAscentResult {
  Vec u;         // potential on the row marginal p
  Vec v;         // potential on the column marginal q
  double value;  // optimal dual = entropic OT value
  int iterations;
};

/// Entropic OT by full-gradient ascent with backtracking line search on the
/// smooth dual  g(u,v) = <u,p> + <v,q> - gamma * sum_ij exp((u_i+v_j-C_ij)/gamma).
/// The plan induced by (u,v) is T_ij = exp((u_i+v_j-C_ij)/gamma); at the
/// optimum T has marginals (p, q) and g equals the regularized primal value.
inline DualAscentResult dual_ascent_ot(const Vec& p, const Vec& q, const Vec& cost,
                                       double gamma, double tol) {
  const int n = static_cast<int>(p.size());
  if (n > 32) throw parameter_error("dual ascent: N <= 32 only");
  if (q.size() != p.size() || cost.size() != static_cast<std::size_t>(n) * n)
    throw validation_error("dual ascent: shape mismatch");
  if (!(gamma > 0.0)) throw parameter_error("dual ascent: gamma must be > 0");

  Vec u(p.size(), 0.0), v(q.size(), 0.0);
  Vec row(p.size()), col(q.size());

  auto eval = [&](const Vec& uu, const Vec& vv, Vec& rsum, Vec& csum) {
    std::fill(rsum.begin(), rsum.end(), 0.0);
    std::fill(csum.begin(), csum.end(), 0.0);
    double mass = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double t = std::exp((uu[static_cast<std::size_t>(i)] + vv[static_cast<std::size_t>(j)] -
                             cost[static_cast<std::size_t>(i) * n + j]) /
                            gamma);
        rsum[static_cast<std::size_t>(i)] += t;
        csum[static_cast<std::size_t>(j)] += t;
        mass += t;
      }
    return vec_dot(uu, p) + vec_dot(vv, q) - gamma * mass;
  };

  double g = eval(u, v, row, col);
  double step = 1.0;
  Vec gu_prev, gv_prev;
  double step_prev = 0.0;
  double best_res = std::numeric_limits<double>::infinity();
  long stalled = 0;
  const long max_iters = 1000000;
  long it = 0;
  for (; it < max_iters; ++it) {
    // gradients: p - T1 and q - T^t 1
    Vec gu(p.size()), gv(q.size());
    double res = 0.0;
    for (int i = 0; i < n; ++i) {
      gu[static_cast<std::size_t>(i)] = p[static_cast<std::size_t>(i)] - row[static_cast<std::size_t>(i)];
      gv[static_cast<std::size_t>(i)] = q[static_cast<std::size_t>(i)] - col[static_cast<std::size_t>(i)];
      res += std::abs(gu[static_cast<std::size_t>(i)]) + std::abs(gv[static_cast<std::size_t>(i)]);
    }
    if (res <= tol) break;
    if (res < 0.9 * best_res) {
      best_res = res;
      stalled = 0;
    } else if (++stalled > 2000) {
      break;  // floating-point floor of the ascent
    }

    // spectral (Barzilai-Borwein) trial step sharpens the tail; the line
    // search below still guards every move
    if (!gu_prev.empty()) {
      double sy = 0.0, yy = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        double yu = gu[i] - gu_prev[i];
        double yv = gv[i] - gv_prev[i];
        sy -= step_prev * (gu_prev[i] * yu + gv_prev[i] * yv);
        yy += yu * yu + yv * yv;
      }
      if (sy > 0.0 && yy > 0.0) step = std::min(1e12, std::max(1e-12, sy / yy));
    }

    Vec ut(p.size()), vt(q.size()), rt(p.size()), ct(q.size());
    double gt = -std::numeric_limits<double>::infinity();
    bool improved = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        ut[i] = u[i] + step * gu[i];
        vt[i] = v[i] + step * gv[i];
      }
      gt = eval(ut, vt, rt, ct);
      if (std::isfinite(gt) && gt >= g) {
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;  // floating-point floor of the ascent reached
    gu_prev = std::move(gu);
    gv_prev = std::move(gv);
    step_prev = step;
    u.swap(ut);
    v.swap(vt);
    row.swap(rt);
    col.swap(ct);
    g = gt;
  }
  if (it >= max_iters)
    throw domain_error("dual ascent: tolerance unreachable in 1e6 iterations");
  return {std::move(u), std::move(v), g, static_cast<int>(it)};
}

namespace detail {

// Jacobi eigenvalues of a small symmetric matrix (row-major m x m).
inline Vec jacobi_eigenvalues(Vec a, int m) {
  auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * m + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-24) break;
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j) {
        if (at(i, j) == 0.0) continue;
        double theta = (at(j, j) - at(i, i)) / (2.0 * at(i, j));
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < m; ++k) {
          double aik = at(i, k), ajk = at(j, k);
          at(i, k) = c * aik - s * ajk;
          at(j, k) = s * aik + c * ajk;
        }
        for (int k = 0; k < m; ++k) {
          double aki = at(k, i), akj = at(k, j);
          at(k, i) = c * aki - s * akj;
          at(k, j) = s * aki + c * akj;
        }
      }
  }
  Vec ev(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) ev[static_cast<std::size_t>(i)] = at(i, i);
  return ev;
}

}  // namespace detail

/// Best rank-k least-squares reconstruction error of an N x M data matrix
/// (columns are datapoints), uncentered: ||X - X_k||_F^2 = sum of the
/// M - k smallest eigenvalues of X^T X.
inline double rank_k_baseline(const std::vector<Vec>& columns, int k) {
  const int m = static_cast<int>(columns.size());
  if (m == 0) throw validation_error("rank-k baseline: empty data");
  const std::size_t n = columns[0].size();
  if (k < 0 || k > std::min<int>(m, static_cast<int>(n)))
    throw parameter_error("rank-k baseline: k out of range");
  Vec gram(static_cast<std::size_t>(m) * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      gram[static_cast<std::size_t>(i) * m + j] = vec_dot(columns[static_cast<std::size_t>(i)],
                                                          columns[static_cast<std::size_t>(j)]);
  Vec ev = detail::jacobi_eigenvalues(gram, m);
  std::sort(ev.begin(), ev.end());  // ascending
  double err = 0.0;
  for (int i = 0; i < m - k; ++i) err += std::max(0.0, ev[static_cast<std::size_t>(i)]);
  return err;
}

}  // namespace wdl::oracle

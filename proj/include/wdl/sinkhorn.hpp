#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "wdl/grid.hpp"
#include "wdl/kernel.hpp"

namespace wdl {

/// Scaling vectors of the pairwise Sinkhorn loop. After the a-update the
/// plan diag(b) K diag(a) has column sums q; after the b-update, row sums p.
struct SinkhornState {
  Vec a;
  Vec b;
  int iter = 0;
};

struct TransportPlan {
  Vec matrix;  // N*N row-major, nonnegative
  std::pair<double, double> marginal_error;  // L1 residuals to (p, q)
};

namespace detail {

inline void check_scaling_finite(const Vec& v, int iter, const char* which) {
  for (double x : v)
    if (!std::isfinite(x))
      throw instability_error(
          std::string("sinkhorn: non-finite ") + which + " at iteration " +
              std::to_string(iter) +
              "; use log-domain mode or a larger gamma",
          iter);
}

inline void check_mass_vector(const Vec& v, const Kernel& k, const char* who) {
  if (static_cast<int>(v.size()) != k.size())
    throw validation_error(std::string(who) + ": histogram/kernel size mismatch");
  double s = 0.0;
  for (double x : v) {
    if (!std::isfinite(x) || x < 0.0)
      throw validation_error(std::string(who) + ": entries must be finite and >= 0");
    s += x;
  }
  if (!(s > 0.0)) throw validation_error(std::string(who) + ": all-zero input");
}

}  // namespace detail

/// Runs exactly L update pairs (a then b), starting from b = 1. Inputs are
/// raw nonnegative mass vectors; the Histogram overload below checks
/// simplex membership.
inline SinkhornState sinkhorn_run(const Vec& p, const Vec& q, const Kernel& k, int L) {
  if (L < 1) throw parameter_error("sinkhorn: L must be >= 1");
  detail::check_mass_vector(p, k, "sinkhorn");
  detail::check_mass_vector(q, k, "sinkhorn");
  const std::size_t n = static_cast<std::size_t>(k.size());
  SinkhornState st;
  st.b.assign(n, 1.0);
  st.a.assign(n, 0.0);
  for (int l = 1; l <= L; ++l) {
    Vec ktb = k.apply(st.b, /*transpose=*/true);
    for (std::size_t i = 0; i < n; ++i) st.a[i] = q[i] / ktb[i];
    detail::check_scaling_finite(st.a, l, "a");
    Vec ka = k.apply(st.a, /*transpose=*/false);
    for (std::size_t i = 0; i < n; ++i) st.b[i] = p[i] / ka[i];
    detail::check_scaling_finite(st.b, l, "b");
    st.iter = l;
  }
  return st;
}

inline SinkhornState sinkhorn_run(const Histogram& p, const Histogram& q,
                                  const Kernel& k, int L) {
  return sinkhorn_run(p.values(), q.values(), k, L);
}

/// Iterates until the L1 marginal residual drops below tol (oracle runs).
inline SinkhornState sinkhorn_run_tol(const Vec& p, const Vec& q, const Kernel& k,
                                      double tol, int max_iters = 100000) {
  detail::check_mass_vector(p, k, "sinkhorn");
  detail::check_mass_vector(q, k, "sinkhorn");
  const std::size_t n = static_cast<std::size_t>(k.size());
  SinkhornState st;
  st.b.assign(n, 1.0);
  st.a.assign(n, 0.0);
  for (int l = 1; l <= max_iters; ++l) {
    Vec ktb = k.apply(st.b, true);
    for (std::size_t i = 0; i < n; ++i) st.a[i] = q[i] / ktb[i];
    detail::check_scaling_finite(st.a, l, "a");
    Vec ka = k.apply(st.a, false);
    for (std::size_t i = 0; i < n; ++i) st.b[i] = p[i] / ka[i];
    detail::check_scaling_finite(st.b, l, "b");
    st.iter = l;
    // residual on the column marginal (rows are exact after the b-update)
    Vec ktb2 = k.apply(st.b, true);
    double res = 0.0;
    for (std::size_t i = 0; i < n; ++i) res += std::abs(st.a[i] * ktb2[i] - q[i]);
    if (res <= tol) break;
  }
  return st;
}

inline SinkhornState sinkhorn_run_tol(const Histogram& p, const Histogram& q,
                                      const Kernel& k, double tol,
                                      int max_iters = 100000) {
  return sinkhorn_run_tol(p.values(), q.values(), k, tol, max_iters);
}

inline TransportPlan extract_plan(const SinkhornState& st, const Kernel& k,
                                  const Vec& p, const Vec& q) {
  const int n = k.size();
  const Vec& kd = k.dense_matrix();
  TransportPlan plan;
  plan.matrix.resize(static_cast<std::size_t>(n) * n);
  Vec rows(static_cast<std::size_t>(n), 0.0), cols(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double t = st.b[static_cast<std::size_t>(i)] * kd[static_cast<std::size_t>(i) * n + j] *
                 st.a[static_cast<std::size_t>(j)];
      plan.matrix[static_cast<std::size_t>(i) * n + j] = t;
      rows[static_cast<std::size_t>(i)] += t;
      cols[static_cast<std::size_t>(j)] += t;
    }
  double ep = 0.0, eq = 0.0;
  for (int i = 0; i < n; ++i) {
    ep += std::abs(rows[static_cast<std::size_t>(i)] - p[static_cast<std::size_t>(i)]);
    eq += std::abs(cols[static_cast<std::size_t>(i)] - q[static_cast<std::size_t>(i)]);
  }
  plan.marginal_error = {ep, eq};
  return plan;
}

inline TransportPlan extract_plan(const SinkhornState& st, const Kernel& k,
                                  const Histogram& p, const Histogram& q) {
  return extract_plan(st, k, p.values(), q.values());
}

struct OtResult {
  double value;
  Vec grad_p;       // gamma * log(a), mean-centered
  Vec potential_p;  // gamma * log(a) as computed (defined up to the
                    // iteration-drift constant when masses differ)
};

/// Entropic OT value after L iterations, with the gradient in the first
/// argument. Internally the loop is run with p on the a-side so that
/// gamma*log(a) is the potential paired with p; the gradient is defined up
/// to a constant on the simplex tangent and is returned mean-centered.
///
/// The value <T,C> + gamma*H(T) is evaluated through the identity
/// C_ij + gamma*(log T_ij - 1) = gamma*(log b_i + log a_j - 1), which needs
/// only the plan's marginals: no dense cost matrix is formed.
inline OtResult ot_cost(const Vec& p, const Vec& q, const Kernel& k, int L) {
  SinkhornState st = sinkhorn_run(q, p, k, L);  // a is now p's scaling
  const std::size_t n = static_cast<std::size_t>(k.size());
  Vec ka = k.apply(st.a, false);
  Vec ktb = k.apply(st.b, true);
  double value = 0.0;
  double mass = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double rowmass = st.b[i] * ka[i];        // (T 1)_i
    double colmass = st.a[i] * ktb[i];       // (T^t 1)_i
    if (rowmass > 0.0) value += rowmass * std::log(st.b[i]);
    if (colmass > 0.0) value += colmass * std::log(st.a[i]);
    mass += colmass;
  }
  value = k.gamma() * (value - mass);

  Vec pot(n);
  for (std::size_t i = 0; i < n; ++i) pot[i] = k.gamma() * std::log(st.a[i]);
  Vec g = pot;
  double mean = vec_mean(g);
  for (double& x : g) x -= mean;
  return {value, std::move(g), std::move(pot)};
}

inline OtResult ot_cost(const Histogram& p, const Histogram& q, const Kernel& k, int L) {
  return ot_cost(p.values(), q.values(), k, L);
}

}  // namespace wdl

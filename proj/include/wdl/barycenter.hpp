#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "wdl/grid.hpp"
#include "wdl/kernel.hpp"

namespace wdl {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// One barycenter evaluation: S atoms, weights on the simplex, and the
/// solver variant (iteration count, heavyball extrapolation tau <= 0,
/// unbalanced KL strength rho with rho = inf balanced, log-domain flag).
struct BarycenterProblem {
  std::vector<Vec> atoms;  // S vectors of length N
  Vec weights;             // lambda in Sigma_S
  const Kernel* kernel = nullptr;
  int iters = 1;           // L
  double tau = 0.0;
  double rho = kInf;
  bool log_domain = false;
  const std::vector<Vec>* warm_start = nullptr;  // optional b^(0) (log-domain
                                                 // values when log_domain)

  void validate() const {
    if (kernel == nullptr) throw validation_error("barycenter: kernel missing");
    if (atoms.empty()) throw validation_error("barycenter: no atoms");
    if (weights.size() != atoms.size())
      throw validation_error("barycenter: weights/atoms size mismatch");
    for (const Vec& d : atoms)
      if (static_cast<int>(d.size()) != kernel->size())
        throw validation_error("barycenter: atom length does not match grid");
    double s = 0.0;
    for (double w : weights) {
      if (!std::isfinite(w) || w < 0.0)
        throw validation_error("barycenter: weights must be finite and >= 0");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-8)
      throw validation_error("barycenter: weights must sum to 1");
    if (iters < 1) throw parameter_error("barycenter: L must be >= 1");
    if (tau > 0.0) throw parameter_error("barycenter: tau must be <= 0");
    if (!(rho > 0.0)) throw parameter_error("barycenter: rho must be > 0");
    if (warm_start && warm_start->size() != atoms.size())
      throw validation_error("barycenter: warm start has wrong atom count");
  }
};

/// Forward pass output plus the per-iteration quantities the backward
/// recursion reads: b^(0..L-1) and phi^(1..L), each S x N per iteration
/// (log-domain values when log_domain is set).
struct BarycenterTrace {
  int L = 0, S = 0, N = 0;
  bool log_domain = false;
  Vec P;      // barycenter P^(L), linear domain
  Vec logP;   // log P^(L), log mode only
  Vec b_hist;    // (L, S, N): scaling b^(l-1) entering iteration l
  Vec phi_hist;  // (L, S, N): phi^(l) = K^t(d_s / (K b_s^(l-1)))
  Vec residuals;    // per-iteration scaling residual max_s |db_s|_inf/|b_s|_inf
  Vec p_residuals;  // per-iteration barycenter residual |dP|_inf/|P|_inf
  bool used_dense_log_fallback = false;

  double* b(int l, int s) { return &b_hist[idx(l, s)]; }
  const double* b(int l, int s) const { return &b_hist[idx(l, s)]; }
  double* phi(int l, int s) { return &phi_hist[idx(l, s)]; }
  const double* phi(int l, int s) const { return &phi_hist[idx(l, s)]; }

  Vec b_vec(int l, int s) const {
    return Vec(b(l, s), b(l, s) + N);
  }
  Vec phi_vec(int l, int s) const {
    return Vec(phi(l, s), phi(l, s) + N);
  }

  /// Final scaling b^(L) (log-domain values in log mode), reconstructed
  /// from P^(L) and phi^(L); used by warm starts and the backward loops.
  Vec b_final(int s) const {
    Vec out(static_cast<std::size_t>(N));
    const double* ph = phi(L - 1, s);
    for (int i = 0; i < N; ++i)
      out[static_cast<std::size_t>(i)] =
          log_domain ? logP[static_cast<std::size_t>(i)] - ph[i]
                     : P[static_cast<std::size_t>(i)] / ph[i];
    return out;
  }

private:
  std::size_t idx(int l, int s) const {
    return (static_cast<std::size_t>(l) * S + s) * N;
  }
};

namespace detail {

inline void throw_unstable(int iter) {
  throw instability_error(
      "barycenter: non-finite scaling at iteration " + std::to_string(iter) +
          "; enable log_domain (or increase gamma)",
      iter);
}

// P := prod_s phi_s^(lambda_s), shared by the plain and heavyball paths so
// tau = 0 reproduces the plain run bit-for-bit.
inline void geometric_mean(const std::vector<Vec>& phis, const Vec& lambda, Vec& out) {
  std::fill(out.begin(), out.end(), 1.0);
  for (std::size_t s = 0; s < phis.size(); ++s)
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] *= std::pow(phis[s][i], lambda[s]);
}

}  // namespace detail

/// Plain and heavyball scaling loops (balanced and unbalanced). tau == 0
/// skips the extrapolation entirely.
inline BarycenterTrace barycenter_scaling_loop(const BarycenterProblem& prob) {
  prob.validate();
  const Kernel& K = *prob.kernel;
  const int S = static_cast<int>(prob.atoms.size());
  const int N = K.size();
  const int L = prob.iters;
  const bool unbalanced = std::isfinite(prob.rho);
  const bool extrapolate = prob.tau != 0.0;
  const double mix = unbalanced ? prob.rho / (prob.rho + K.gamma()) : 1.0;

  BarycenterTrace tr;
  tr.L = L;
  tr.S = S;
  tr.N = N;
  tr.b_hist.resize(static_cast<std::size_t>(L) * S * N);
  tr.phi_hist.resize(static_cast<std::size_t>(L) * S * N);
  tr.residuals.resize(static_cast<std::size_t>(L));
  tr.p_residuals.resize(static_cast<std::size_t>(L));

  std::vector<Vec> b(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N), 1.0));
  if (prob.warm_start)
    for (int s = 0; s < S; ++s) b[static_cast<std::size_t>(s)] = (*prob.warm_start)[static_cast<std::size_t>(s)];
  std::vector<Vec> a_prev(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N), 1.0));
  std::vector<Vec> phis(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N)));
  Vec p(static_cast<std::size_t>(N)), p_prev;

  for (int l = 1; l <= L; ++l) {
    for (int s = 0; s < S; ++s)
      std::copy(b[static_cast<std::size_t>(s)].begin(), b[static_cast<std::size_t>(s)].end(),
                tr.b(l - 1, s));
    for (int s = 0; s < S; ++s) {
      Vec kb = K.apply(b[static_cast<std::size_t>(s)], false);
      Vec a(static_cast<std::size_t>(N));
      for (int i = 0; i < N; ++i) {
        double t = prob.atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] /
                   kb[static_cast<std::size_t>(i)];
        a[static_cast<std::size_t>(i)] = unbalanced ? std::pow(t, mix) : t;
      }
      if (extrapolate) {
        for (int i = 0; i < N; ++i)
          a[static_cast<std::size_t>(i)] =
              std::pow(a_prev[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)], prob.tau) *
              std::pow(a[static_cast<std::size_t>(i)], 1.0 - prob.tau);
        a_prev[static_cast<std::size_t>(s)] = a;
      }
      phis[static_cast<std::size_t>(s)] = K.apply(a, true);
      if (!all_finite(phis[static_cast<std::size_t>(s)])) detail::throw_unstable(l);
      std::copy(phis[static_cast<std::size_t>(s)].begin(), phis[static_cast<std::size_t>(s)].end(),
                tr.phi(l - 1, s));
    }
    if (!unbalanced) {
      detail::geometric_mean(phis, prob.weights, p);
    } else {
      const double g = K.gamma() / (prob.rho + K.gamma());
      for (int i = 0; i < N; ++i) {
        double acc = 0.0;
        for (int s = 0; s < S; ++s)
          acc += prob.weights[static_cast<std::size_t>(s)] *
                 std::pow(phis[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)], g);
        p[static_cast<std::size_t>(i)] = std::pow(acc, 1.0 / g);
      }
    }
    if (!all_finite(p)) detail::throw_unstable(l);
    if (p_prev.empty()) {
      tr.p_residuals[static_cast<std::size_t>(l - 1)] = kInf;
    } else {
      double dmax = 0.0, pmax = 0.0;
      for (int i = 0; i < N; ++i) {
        dmax = std::max(dmax, std::abs(p[static_cast<std::size_t>(i)] - p_prev[static_cast<std::size_t>(i)]));
        pmax = std::max(pmax, p[static_cast<std::size_t>(i)]);
      }
      tr.p_residuals[static_cast<std::size_t>(l - 1)] = pmax > 0.0 ? dmax / pmax : dmax;
    }
    p_prev = p;

    double res = 0.0;
    for (int s = 0; s < S; ++s) {
      Vec& bs = b[static_cast<std::size_t>(s)];
      double dmax = 0.0, bmax = 0.0;
      for (int i = 0; i < N; ++i) {
        double t = p[static_cast<std::size_t>(i)] / phis[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
        double bn = unbalanced ? std::pow(t, mix) : t;
        if (extrapolate)
          bn = std::pow(bs[static_cast<std::size_t>(i)], prob.tau) * std::pow(bn, 1.0 - prob.tau);
        dmax = std::max(dmax, std::abs(bn - bs[static_cast<std::size_t>(i)]));
        bmax = std::max(bmax, std::abs(bn));
        bs[static_cast<std::size_t>(i)] = bn;
      }
      if (!all_finite(bs)) detail::throw_unstable(l);
      res = std::max(res, bmax > 0.0 ? dmax / bmax : dmax);
    }
    tr.residuals[static_cast<std::size_t>(l - 1)] = res;
  }
  tr.P = p;
  return tr;
}

/// Generalized Sinkhorn forward loop (balanced, no extrapolation).
inline BarycenterTrace barycenter_forward(const BarycenterProblem& prob) {
  if (prob.log_domain)
    throw parameter_error("barycenter_forward: log_domain requests the stabilized path");
  if (std::isfinite(prob.rho))
    throw parameter_error("barycenter_forward: finite rho requests the unbalanced path");
  if (prob.tau != 0.0)
    throw parameter_error("barycenter_forward: tau != 0 requests the heavyball path");
  return barycenter_scaling_loop(prob);
}

/// Heavyball extrapolation of the scaling updates; tau = 0 reproduces the
/// plain loop bit-for-bit. The extrapolation starts from a^(0) = 1.
inline BarycenterTrace barycenter_heavyball(const BarycenterProblem& prob) {
  if (prob.tau > 0.0) throw parameter_error("barycenter: tau must be <= 0");
  if (prob.log_domain)
    throw parameter_error("barycenter: heavyball is a linear-domain solver");
  return barycenter_scaling_loop(prob);
}

/// Unbalanced scaling updates; mass is not conserved, so P^(L) need not be
/// on the simplex.
inline BarycenterTrace barycenter_unbalanced(const BarycenterProblem& prob) {
  if (!std::isfinite(prob.rho))
    throw parameter_error("barycenter_unbalanced: rho must be finite");
  if (prob.log_domain)
    throw parameter_error("barycenter: unbalanced is a linear-domain solver");
  return barycenter_scaling_loop(prob);
}

/// Stabilized forward loop: scalings carried as logs, kernel applications
/// via shifted log-sum-exp. Balanced, no extrapolation.
inline BarycenterTrace barycenter_log_domain(const BarycenterProblem& prob) {
  prob.validate();
  if (std::isfinite(prob.rho) || prob.tau != 0.0)
    throw parameter_error("barycenter: log-domain supports the balanced, "
                          "non-extrapolated updates only");
  const Kernel& K = *prob.kernel;
  const int S = static_cast<int>(prob.atoms.size());
  const int N = K.size();
  const int L = prob.iters;

  BarycenterTrace tr;
  tr.L = L;
  tr.S = S;
  tr.N = N;
  tr.log_domain = true;
  tr.used_dense_log_fallback = !K.separable();
  tr.b_hist.resize(static_cast<std::size_t>(L) * S * N);
  tr.phi_hist.resize(static_cast<std::size_t>(L) * S * N);
  tr.residuals.resize(static_cast<std::size_t>(L));
  tr.p_residuals.resize(static_cast<std::size_t>(L));

  std::vector<Vec> log_atoms(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N)));
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < N; ++i) {
      double d = prob.atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
      log_atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] =
          d > 0.0 ? std::log(d) : kNegInf;
    }

  std::vector<Vec> v(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N), 0.0));
  if (prob.warm_start)
    for (int s = 0; s < S; ++s) v[static_cast<std::size_t>(s)] = (*prob.warm_start)[static_cast<std::size_t>(s)];
  std::vector<Vec> lphis(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N)));
  Vec lp(static_cast<std::size_t>(N)), lp_prev;

  for (int l = 1; l <= L; ++l) {
    for (int s = 0; s < S; ++s)
      std::copy(v[static_cast<std::size_t>(s)].begin(), v[static_cast<std::size_t>(s)].end(),
                tr.b(l - 1, s));
    for (int s = 0; s < S; ++s) {
      Vec lkb = K.log_apply(v[static_cast<std::size_t>(s)], false);
      Vec la(static_cast<std::size_t>(N));
      for (int i = 0; i < N; ++i)
        la[static_cast<std::size_t>(i)] =
            log_atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] -
            lkb[static_cast<std::size_t>(i)];
      lphis[static_cast<std::size_t>(s)] = K.log_apply(la, true);
      std::copy(lphis[static_cast<std::size_t>(s)].begin(),
                lphis[static_cast<std::size_t>(s)].end(), tr.phi(l - 1, s));
    }
    for (int i = 0; i < N; ++i) {
      double acc = 0.0;
      for (int s = 0; s < S; ++s)
        acc += prob.weights[static_cast<std::size_t>(s)] *
               lphis[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
      lp[static_cast<std::size_t>(i)] = acc;
    }
    if (lp_prev.empty()) {
      tr.p_residuals[static_cast<std::size_t>(l - 1)] = kInf;
    } else {
      double dmax = 0.0, pmax = 0.0;
      for (int i = 0; i < N; ++i) {
        double cur = std::exp(lp[static_cast<std::size_t>(i)]);
        dmax = std::max(dmax, std::abs(cur - std::exp(lp_prev[static_cast<std::size_t>(i)])));
        pmax = std::max(pmax, cur);
      }
      tr.p_residuals[static_cast<std::size_t>(l - 1)] = pmax > 0.0 ? dmax / pmax : dmax;
    }
    lp_prev = lp;
    double res = 0.0;
    for (int s = 0; s < S; ++s) {
      Vec& vs = v[static_cast<std::size_t>(s)];
      for (int i = 0; i < N; ++i) {
        double vn = lp[static_cast<std::size_t>(i)] - lphis[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
        res = std::max(res, std::abs(vn - vs[static_cast<std::size_t>(i)]));
        vs[static_cast<std::size_t>(i)] = vn;
      }
    }
    tr.residuals[static_cast<std::size_t>(l - 1)] = res;  // change of log b
  }
  tr.logP = lp;
  tr.P.resize(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i)
    tr.P[static_cast<std::size_t>(i)] = std::exp(lp[static_cast<std::size_t>(i)]);
  return tr;
}

/// Dispatches on the problem's solver variant.
inline BarycenterTrace barycenter_solve(const BarycenterProblem& prob) {
  if (prob.log_domain) return barycenter_log_domain(prob);
  if (std::isfinite(prob.rho)) return barycenter_unbalanced(prob);
  if (prob.tau != 0.0) return barycenter_heavyball(prob);
  return barycenter_forward(prob);
}

}  // namespace wdl

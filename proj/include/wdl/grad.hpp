#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wdl/barycenter.hpp"
#include "wdl/grid.hpp"
#include "wdl/kernel.hpp"
#include "wdl/losses.hpp"

// Reverse-mode differentiation of the barycenter operator, by backward
// recursion through the stored scaling iterations.
//
// Sign conventions. The backward recursions carry two running cotangents:
//   weights loop    r_s := -K^t( K((lambda_s*g - r_s)/phi_s) .* d_s/(Kb_s)^2 ) .* b_s,
//                   g   := sum_s r_s
//   dictionary loop z_s := -(1/phi_s) .* K^t( d_s .* c_s/(Kb_s)^2 ),
//                   c_s := K((lambda_s*n - z_s) .* b_s),  n := sum_s z_s
// The same recursion admits an equivalent form with the minus moved out of
// r/z into the reductions (r'_s = -r_s, g := -sum r'_s, inner argument
// lambda_s*g + r'_s; likewise for z). Both forms appear in the literature,
// sometimes mixed within one source, which flips a sign if transcribed
// naively; every sign below is pinned by the finite-difference tests in
// tests/test_grad.cpp and the gradcheck command. The log-domain path uses
// the FIRST form throughout, storing signs and log-magnitudes.

namespace wdl {

/// Per-datapoint output: the barycenter and the two gradients.
struct GradientPack {
  Vec barycenter;              // P^(L)
  std::vector<Vec> grad_atoms; // S x N
  Vec grad_weights;            // S
};

namespace detail {

// Zeroes the sign wherever the log-magnitude is -inf (exact zeros).
inline void resync_signs(SignedLog& s) {
  for (std::size_t i = 0; i < s.logabs.size(); ++i)
    if (s.logabs[i] == kNegInf) s.sign[i] = 0;
}

inline void check_backward_finite(const Vec& v, int step) {
  if (!all_finite(v))
    throw instability_error(
        "backward recursion: non-finite value at step " + std::to_string(step) +
            "; enable log_domain (or increase gamma)",
        step);
}

}  // namespace detail

/// Backward recursion through a stored (linear-domain) forward trace.
/// loss_grad enters exactly as the cotangent of P^(L): no centering or
/// other adjustment is applied here.
inline GradientPack backward_grads(const BarycenterTrace& tr,
                                   const std::vector<Vec>& atoms, const Vec& lambda,
                                   const Kernel& K, const Vec& loss_grad) {
  if (tr.log_domain)
    throw validation_error("backward_grads: trace is log-domain; use log_backward_grads");
  const int S = tr.S, N = tr.N, L = tr.L;
  if (static_cast<int>(loss_grad.size()) != N)
    throw validation_error("backward_grads: cotangent length mismatch");

  GradientPack pack;
  pack.barycenter = tr.P;
  pack.grad_weights.assign(static_cast<std::size_t>(S), 0.0);
  pack.grad_atoms.assign(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N), 0.0));

  // ---- weights loop: w, r, g over l = L..1
  {
    std::vector<Vec> r(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N), 0.0));
    Vec g(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i)
      g[static_cast<std::size_t>(i)] =
          loss_grad[static_cast<std::size_t>(i)] * tr.P[static_cast<std::size_t>(i)];
    for (int l = L; l >= 1; --l) {
      for (int s = 0; s < S; ++s) {
        const double* phi = tr.phi(l - 1, s);
        double acc = 0.0;
        for (int i = 0; i < N; ++i)
          acc += std::log(phi[i]) * g[static_cast<std::size_t>(i)];
        pack.grad_weights[static_cast<std::size_t>(s)] += acc;
      }
      std::vector<Vec> r_new(static_cast<std::size_t>(S));
      for (int s = 0; s < S; ++s) {
        const double* phi = tr.phi(l - 1, s);
        const double* bprev = tr.b(l - 1, s);
        Vec kb = K.apply(tr.b_vec(l - 1, s), false);
        Vec inner(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i)
          inner[static_cast<std::size_t>(i)] =
              (lambda[static_cast<std::size_t>(s)] * g[static_cast<std::size_t>(i)] -
               r[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)]) /
              phi[i];
        Vec t = K.apply(inner, false);
        for (int i = 0; i < N; ++i)
          t[static_cast<std::size_t>(i)] *=
              atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] /
              (kb[static_cast<std::size_t>(i)] * kb[static_cast<std::size_t>(i)]);
        Vec u = K.apply(t, true);
        for (int i = 0; i < N; ++i)
          u[static_cast<std::size_t>(i)] = -u[static_cast<std::size_t>(i)] * bprev[i];
        detail::check_backward_finite(u, l);
        r_new[static_cast<std::size_t>(s)] = std::move(u);
      }
      r = std::move(r_new);
      std::fill(g.begin(), g.end(), 0.0);
      for (int s = 0; s < S; ++s)
        for (int i = 0; i < N; ++i)
          g[static_cast<std::size_t>(i)] += r[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
    }
  }

  // ---- dictionary loop: y, z, n, c over l = L..1
  {
    std::vector<Vec> z(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N), 0.0));
    Vec n_vec = loss_grad;
    for (int l = L; l >= 1; --l) {
      std::vector<Vec> z_new(static_cast<std::size_t>(S),
                             Vec(static_cast<std::size_t>(N), 0.0));
      for (int s = 0; s < S; ++s) {
        // b^(l): stored for l < L, and P^(L)/phi^(L) at the top
        Vec bl(static_cast<std::size_t>(N));
        if (l == L) {
          const double* phiL = tr.phi(L - 1, s);
          for (int i = 0; i < N; ++i)
            bl[static_cast<std::size_t>(i)] = tr.P[static_cast<std::size_t>(i)] / phiL[i];
        } else {
          bl = tr.b_vec(l, s);
        }
        Vec arg(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i)
          arg[static_cast<std::size_t>(i)] =
              (lambda[static_cast<std::size_t>(s)] * n_vec[static_cast<std::size_t>(i)] -
               z[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)]) *
              bl[static_cast<std::size_t>(i)];
        Vec c = K.apply(arg, false);
        Vec kb = K.apply(tr.b_vec(l - 1, s), false);
        for (int i = 0; i < N; ++i)
          pack.grad_atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] +=
              c[static_cast<std::size_t>(i)] / kb[static_cast<std::size_t>(i)];
        detail::check_backward_finite(pack.grad_atoms[static_cast<std::size_t>(s)], l);
        if (l > 1) {  // the l = 1 z-update reads phi^(0), which does not
                      // exist, and influences no output: skipped
          const double* phiprev = tr.phi(l - 2, s);
          Vec t(static_cast<std::size_t>(N));
          for (int i = 0; i < N; ++i)
            t[static_cast<std::size_t>(i)] =
                atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] *
                c[static_cast<std::size_t>(i)] /
                (kb[static_cast<std::size_t>(i)] * kb[static_cast<std::size_t>(i)]);
          Vec u = K.apply(t, true);
          for (int i = 0; i < N; ++i)
            z_new[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] =
                -u[static_cast<std::size_t>(i)] / phiprev[i];
          detail::check_backward_finite(z_new[static_cast<std::size_t>(s)], l);
        }
      }
      if (l > 1) {
        z = std::move(z_new);
        std::fill(n_vec.begin(), n_vec.end(), 0.0);
        for (int s = 0; s < S; ++s)
          for (int i = 0; i < N; ++i)
            n_vec[static_cast<std::size_t>(i)] +=
                z[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
      }
    }
  }
  return pack;
}

/// Forward + loss gradient + backward in one call.
inline GradientPack sinkhorn_grads(const Vec& x, const std::vector<Vec>& atoms,
                                   const Vec& lambda, const Kernel& K, int L,
                                   const LossKind& loss) {
  BarycenterProblem prob;
  prob.atoms = atoms;
  prob.weights = lambda;
  prob.kernel = &K;
  prob.iters = L;
  BarycenterTrace tr = barycenter_forward(prob);
  Vec lg = loss_grad(loss, tr.P, x, &K);
  return backward_grads(tr, atoms, lambda, K, lg);
}

// ---------------------------------------------------------------------------
// Analytic backward recursion built from the closed-form Jacobian blocks of
// the two forward maps
//   Psi(b, D, lambda) = prod_s (K^t(d_s/(K b_s)))^(lambda_s)
//   Phi_s(b, D, lambda) = Psi / (K^t(d_s/(K b_s)))
// applied as vector-Jacobian products, never materializing NS x NS matrices.
// Cross-checks the fused loops above; small grids only.
// ---------------------------------------------------------------------------

inline GradientPack prop31_grads(const Vec& x, const std::vector<Vec>& atoms,
                                 const Vec& lambda, const Kernel& K, int L,
                                 const LossKind& loss) {
  if (K.size() > 64)
    throw parameter_error(
        "prop31_grads: explicit vector-Jacobian recursion is guarded to N <= 64; "
        "use sinkhorn_grads");
  BarycenterProblem prob;
  prob.atoms = atoms;
  prob.weights = lambda;
  prob.kernel = &K;
  prob.iters = L;
  BarycenterTrace tr = barycenter_forward(prob);
  Vec lg = loss_grad(loss, tr.P, x, &K);

  const int S = tr.S, N = tr.N;

  // [d phi/d b_s]^t u = -K^t( (K u) .* d_s/(K b_s)^2 ), evaluated at b^(level)
  auto dphi_vjp = [&](int level, int s, const Vec& u) {
    Vec ku = K.apply(u, false);
    Vec kb = K.apply(tr.b_vec(level, s), false);
    for (int i = 0; i < N; ++i)
      ku[static_cast<std::size_t>(i)] *=
          atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] /
          (kb[static_cast<std::size_t>(i)] * kb[static_cast<std::size_t>(i)]);
    Vec out = K.apply(ku, true);
    for (double& v : out) v = -v;
    return out;
  };

  auto b_at = [&](int level, int s) {  // b^(level), level in 0..L
    if (level < L) return tr.b_vec(level, s);
    Vec out(static_cast<std::size_t>(N));
    const double* phiL = tr.phi(L - 1, s);
    for (int i = 0; i < N; ++i)
      out[static_cast<std::size_t>(i)] = tr.P[static_cast<std::size_t>(i)] / phiL[i];
    return out;
  };

  GradientPack pack;
  pack.barycenter = tr.P;
  pack.grad_weights.assign(static_cast<std::size_t>(S), 0.0);
  pack.grad_atoms.assign(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N), 0.0));

  // Psi blocks at level L-1 applied to the loss cotangent.
  std::vector<Vec> v(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) {
    const double* phiL = tr.phi(L - 1, s);
    Vec bL = b_at(L, s);

    // Psi_lambda: <log phi_s^(L), P .* u>
    double acc = 0.0;
    for (int i = 0; i < N; ++i)
      acc += std::log(phiL[i]) * tr.P[static_cast<std::size_t>(i)] *
             lg[static_cast<std::size_t>(i)];
    pack.grad_weights[static_cast<std::size_t>(s)] = acc;

    // Psi_D: lambda_s K(b_s^(L) .* u) / (K b_s^(L-1))
    Vec arg(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i)
      arg[static_cast<std::size_t>(i)] =
          bL[static_cast<std::size_t>(i)] * lg[static_cast<std::size_t>(i)];
    Vec kc = K.apply(arg, false);
    Vec kb = K.apply(tr.b_vec(L - 1, s), false);
    for (int i = 0; i < N; ++i)
      pack.grad_atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] =
          lambda[static_cast<std::size_t>(s)] * kc[static_cast<std::size_t>(i)] /
          kb[static_cast<std::size_t>(i)];

    // Psi_b: lambda_s [d phi/d b_s]^t (b_s^(L) .* u)
    Vec varg(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i)
      varg[static_cast<std::size_t>(i)] =
          bL[static_cast<std::size_t>(i)] * lg[static_cast<std::size_t>(i)];
    v[static_cast<std::size_t>(s)] = dphi_vjp(L - 1, s, varg);
    for (double& t : v[static_cast<std::size_t>(s)]) t *= lambda[static_cast<std::size_t>(s)];
  }

  // Phi blocks at levels l = L-2 .. 0, consuming v^(l+1).
  for (int l = L - 2; l >= 0; --l) {
    // common = sum_t v_t / phi_t^(l+1)
    Vec common(static_cast<std::size_t>(N), 0.0);
    for (int t = 0; t < S; ++t) {
      const double* phi = tr.phi(l, t);
      for (int i = 0; i < N; ++i)
        common[static_cast<std::size_t>(i)] +=
            v[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] / phi[i];
    }
    // Phi_lambda: <log phi_t^(l+1), sum_s v_s .* b_s^(l+1)>
    Vec gsum(static_cast<std::size_t>(N), 0.0);
    for (int s = 0; s < S; ++s) {
      Vec bnext = b_at(l + 1, s);
      for (int i = 0; i < N; ++i)
        gsum[static_cast<std::size_t>(i)] +=
            v[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] *
            bnext[static_cast<std::size_t>(i)];
    }
    for (int t = 0; t < S; ++t) {
      const double* phi = tr.phi(l, t);
      double acc = 0.0;
      for (int i = 0; i < N; ++i)
        acc += std::log(phi[i]) * gsum[static_cast<std::size_t>(i)];
      pack.grad_weights[static_cast<std::size_t>(t)] += acc;
    }
    // Phi_D and Phi_b share the argument b_i^(l+1) .* (lambda_i common - v_i/phi_i).
    std::vector<Vec> v_new(static_cast<std::size_t>(S));
    for (int i_atom = 0; i_atom < S; ++i_atom) {
      const double* phi = tr.phi(l, i_atom);
      Vec bnext = b_at(l + 1, i_atom);
      Vec arg(static_cast<std::size_t>(N));
      for (int i = 0; i < N; ++i)
        arg[static_cast<std::size_t>(i)] =
            bnext[static_cast<std::size_t>(i)] *
            (lambda[static_cast<std::size_t>(i_atom)] * common[static_cast<std::size_t>(i)] -
             v[static_cast<std::size_t>(i_atom)][static_cast<std::size_t>(i)] / phi[i]);
      Vec kc = K.apply(arg, false);
      Vec kb = K.apply(tr.b_vec(l, i_atom), false);
      for (int i = 0; i < N; ++i)
        pack.grad_atoms[static_cast<std::size_t>(i_atom)][static_cast<std::size_t>(i)] +=
            kc[static_cast<std::size_t>(i)] / kb[static_cast<std::size_t>(i)];
      v_new[static_cast<std::size_t>(i_atom)] = dphi_vjp(l, i_atom, arg);
    }
    v = std::move(v_new);
  }
  return pack;
}

// ---------------------------------------------------------------------------
// Log-domain backward: the same recursions with every kernel application
// performed as a signed shifted log-sum-exp on (sign, log|value|) pairs.
// ---------------------------------------------------------------------------

inline GradientPack log_backward_grads(const BarycenterTrace& tr,
                                       const std::vector<Vec>& atoms, const Vec& lambda,
                                       const Kernel& K, const Vec& loss_grad) {
  if (!tr.log_domain)
    throw validation_error("log_backward_grads: trace is linear-domain");
  const int S = tr.S, N = tr.N, L = tr.L;

  std::vector<Vec> log_atoms(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N)));
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < N; ++i) {
      double d = atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
      log_atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] =
          d > 0.0 ? std::log(d) : kNegInf;
    }

  GradientPack pack;
  pack.barycenter = tr.P;
  pack.grad_weights.assign(static_cast<std::size_t>(S), 0.0);
  pack.grad_atoms.assign(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N), 0.0));

  // log(K b^(l-1)) is reused by every block of both backward loops
  Vec lkb_all(static_cast<std::size_t>(L) * S * N);
  for (int l = 1; l <= L; ++l)
    for (int s = 0; s < S; ++s) {
      Vec lkb = K.log_apply(tr.b_vec(l - 1, s), false);
      std::copy(lkb.begin(), lkb.end(),
                lkb_all.begin() + (static_cast<std::size_t>(l - 1) * S + s) * N);
    }
  auto log_kb = [&](int l, int s) {
    auto first = lkb_all.begin() + (static_cast<std::size_t>(l - 1) * S + s) * N;
    return Vec(first, first + N);
  };

  // ---- weights loop
  {
    std::vector<Vec> r(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N), 0.0));
    Vec g(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i)
      g[static_cast<std::size_t>(i)] =
          loss_grad[static_cast<std::size_t>(i)] * tr.P[static_cast<std::size_t>(i)];
    for (int l = L; l >= 1; --l) {
      for (int s = 0; s < S; ++s) {
        const double* lphi = tr.phi(l - 1, s);
        double acc = 0.0;
        for (int i = 0; i < N; ++i) acc += lphi[i] * g[static_cast<std::size_t>(i)];
        pack.grad_weights[static_cast<std::size_t>(s)] += acc;
      }
      std::vector<Vec> r_new(static_cast<std::size_t>(S));
      for (int s = 0; s < S; ++s) {
        const double* lphi = tr.phi(l - 1, s);
        const double* vprev = tr.b(l - 1, s);
        Vec lkb = log_kb(l, s);
        Vec inner(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i)
          inner[static_cast<std::size_t>(i)] =
              lambda[static_cast<std::size_t>(s)] * g[static_cast<std::size_t>(i)] -
              r[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
        SignedLog sl = SignedLog::from_linear(inner);
        for (int i = 0; i < N; ++i) sl.logabs[static_cast<std::size_t>(i)] -= lphi[i];
        SignedLog mid = K.log_apply_signed(sl, false);
        for (int i = 0; i < N; ++i)
          mid.logabs[static_cast<std::size_t>(i)] +=
              log_atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] -
              2.0 * lkb[static_cast<std::size_t>(i)];
        detail::resync_signs(mid);
        SignedLog outer = K.log_apply_signed(mid, true);
        Vec rn(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i) {
          double mag = outer.sign[static_cast<std::size_t>(i)] == 0
                           ? 0.0
                           : outer.sign[static_cast<std::size_t>(i)] *
                                 std::exp(outer.logabs[static_cast<std::size_t>(i)] + vprev[i]);
          rn[static_cast<std::size_t>(i)] = -mag;
        }
        r_new[static_cast<std::size_t>(s)] = std::move(rn);
      }
      r = std::move(r_new);
      std::fill(g.begin(), g.end(), 0.0);
      for (int s = 0; s < S; ++s)
        for (int i = 0; i < N; ++i)
          g[static_cast<std::size_t>(i)] += r[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
    }
  }

  // ---- dictionary loop
  {
    std::vector<Vec> z(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N), 0.0));
    Vec n_vec = loss_grad;
    for (int l = L; l >= 1; --l) {
      std::vector<Vec> z_new(static_cast<std::size_t>(S),
                             Vec(static_cast<std::size_t>(N), 0.0));
      for (int s = 0; s < S; ++s) {
        Vec vl(static_cast<std::size_t>(N));  // log b^(l)
        if (l == L) {
          const double* lphiL = tr.phi(L - 1, s);
          for (int i = 0; i < N; ++i)
            vl[static_cast<std::size_t>(i)] = tr.logP[static_cast<std::size_t>(i)] - lphiL[i];
        } else {
          vl = tr.b_vec(l, s);
        }
        Vec arg(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i)
          arg[static_cast<std::size_t>(i)] =
              lambda[static_cast<std::size_t>(s)] * n_vec[static_cast<std::size_t>(i)] -
              z[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
        SignedLog sl = SignedLog::from_linear(arg);
        for (int i = 0; i < N; ++i)
          sl.logabs[static_cast<std::size_t>(i)] += vl[static_cast<std::size_t>(i)];
        SignedLog c = K.log_apply_signed(sl, false);
        Vec lkb = log_kb(l, s);
        for (int i = 0; i < N; ++i) {
          if (c.sign[static_cast<std::size_t>(i)] == 0) continue;
          pack.grad_atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] +=
              c.sign[static_cast<std::size_t>(i)] *
              std::exp(c.logabs[static_cast<std::size_t>(i)] - lkb[static_cast<std::size_t>(i)]);
        }
        if (l > 1) {  // dead z-update at l = 1 skipped (phi^(0) undefined)
          const double* lphiprev = tr.phi(l - 2, s);
          SignedLog t = c;
          for (int i = 0; i < N; ++i)
            t.logabs[static_cast<std::size_t>(i)] +=
                log_atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] -
                2.0 * lkb[static_cast<std::size_t>(i)];
          detail::resync_signs(t);
          SignedLog u = K.log_apply_signed(t, true);
          for (int i = 0; i < N; ++i) {
            double mag = u.sign[static_cast<std::size_t>(i)] == 0
                             ? 0.0
                             : u.sign[static_cast<std::size_t>(i)] *
                                   std::exp(u.logabs[static_cast<std::size_t>(i)] - lphiprev[i]);
            z_new[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] = -mag;
          }
        }
      }
      if (l > 1) {
        z = std::move(z_new);
        std::fill(n_vec.begin(), n_vec.end(), 0.0);
        for (int s = 0; s < S; ++s)
          for (int i = 0; i < N; ++i)
            n_vec[static_cast<std::size_t>(i)] +=
                z[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
      }
    }
  }
  return pack;
}

inline GradientPack log_sinkhorn_grads(const Vec& x, const std::vector<Vec>& atoms,
                                       const Vec& lambda, const Kernel& K, int L,
                                       const LossKind& loss) {
  BarycenterProblem prob;
  prob.atoms = atoms;
  prob.weights = lambda;
  prob.kernel = &K;
  prob.iters = L;
  prob.log_domain = true;
  BarycenterTrace tr = barycenter_log_domain(prob);
  Vec lg = loss_grad(loss, tr.P, x, &K);
  return log_backward_grads(tr, atoms, lambda, K, lg);
}

}  // namespace wdl

#pragma once

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "wdl/barycenter.hpp"
#include "wdl/grad.hpp"
#include "wdl/grid.hpp"
#include "wdl/kernel.hpp"
#include "wdl/losses.hpp"
#include "wdl/softmax.hpp"

namespace wdl {

enum class AtomInit { UniformAtoms, RandomAtoms };

struct TrainConfig {
  int S = 2;              // atom count
  int L = 10;             // Sinkhorn iterations per evaluation
  double gamma = 1.0;
  LossKind loss = LossKind::quadratic();
  double zeta = 0.0;      // weight-gradient scale; 0 = default N/(100*M)
  double tau = 0.0;       // <= 0; decode-time extrapolation
  double rho = kInf;      // decode-time unbalanced KL strength
  bool log_domain = false;
  bool warm_start = false;
  int restart_every = 10;     // quasi-Newton memory restart period
  int max_outer_iters = 100;
  int lbfgs_memory = 10;
  unsigned long long seed = 0;
  AtomInit init = AtomInit::UniformAtoms;  // weights are always random

  void validate() const {
    if (S < 2) throw parameter_error("train: S must be >= 2");
    if (L < 1) throw parameter_error("train: L must be >= 1");
    if (!(gamma > 0.0)) throw parameter_error("train: gamma must be > 0");
    if (zeta < 0.0) throw parameter_error("train: zeta must be >= 0");
    if (tau > 0.0) throw parameter_error("train: tau must be <= 0");
    if (!(rho > 0.0)) throw parameter_error("train: rho must be > 0");
    if (restart_every < 1) throw parameter_error("train: restart_every must be >= 1");
    if (max_outer_iters < 1) throw parameter_error("train: max_outer_iters must be >= 1");
    if (lbfgs_memory < 1) throw parameter_error("train: lbfgs_memory must be >= 1");
  }

  double effective_zeta(int n_bins, int n_data) const {
    return zeta > 0.0 ? zeta : static_cast<double>(n_bins) / (100.0 * n_data);
  }
};

struct HistoryRow {
  int outer_iter;
  double objective;
  double mean_recon_error;  // mean squared error of the reconstructions
  double seconds;           // wall time since training started
};

struct TrainState {
  std::vector<Vec> alpha;  // S logit vectors of length N
  std::vector<Vec> beta;   // M logit vectors of length S
  // Final scaling vectors of the previous evaluation, per datapoint and atom
  // (log-domain values when the stabilized path is active). Seeded as b^(0)
  // of the next evaluation when warm starts are on, and treated as constants
  // in differentiation.
  std::vector<std::vector<Vec>> warm_b;
  std::vector<HistoryRow> history;
  // warm_b is only valid for the configuration it was produced under
  int warm_S = -1, warm_L = -1;
  double warm_gamma = 0.0;
  bool warm_log = false;

  void invalidate_warm_if_changed(const TrainConfig& cfg) {
    if (warm_S != cfg.S || warm_L != cfg.L || warm_gamma != cfg.gamma ||
        warm_log != cfg.log_domain) {
      warm_b.clear();
      warm_S = cfg.S;
      warm_L = cfg.L;
      warm_gamma = cfg.gamma;
      warm_log = cfg.log_domain;
    }
  }
};

struct EnergyEval {
  double value = 0.0;
  std::vector<Vec> grad_alpha;  // S x N
  std::vector<Vec> grad_beta;   // M x S
  double mean_recon_error = 0.0;
  // final scaling vectors of this evaluation, per datapoint and atom
  std::vector<std::vector<Vec>> new_warm;
};

/// Truncated energy and its logit-space gradients, summed over datapoints in
/// index order. Weight gradients are multiplied by zeta. Training uses the
/// plain/log-domain solver paths; tau and rho only affect decoding, see
/// reconstruct().
///
/// With commit_warm (the default), the evaluation's final scalings replace
/// state.warm_b so the next call is seeded by this one. The trainer commits
/// once per accepted step instead: advancing the warm state inside a line
/// search changes the energy mid-search and breaks the sufficient-decrease
/// comparison.
inline EnergyEval energy_and_grads(TrainState& state, const std::vector<Vec>& data,
                                   const TrainConfig& cfg, const Kernel& kernel,
                                   bool commit_warm = true) {
  cfg.validate();
  const int M = static_cast<int>(data.size());
  const int N = kernel.size();
  const int S = cfg.S;
  const double zeta = cfg.effective_zeta(N, M);

  state.invalidate_warm_if_changed(cfg);

  std::vector<Vec> atoms(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) atoms[static_cast<std::size_t>(s)] = softmax(state.alpha[static_cast<std::size_t>(s)]);

  EnergyEval out;
  out.grad_alpha.assign(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N), 0.0));
  out.grad_beta.assign(static_cast<std::size_t>(M), Vec(static_cast<std::size_t>(S), 0.0));
  std::vector<Vec> grad_atoms_total(static_cast<std::size_t>(S),
                                    Vec(static_cast<std::size_t>(N), 0.0));
  std::vector<std::vector<Vec>> new_warm(static_cast<std::size_t>(M));

  for (int i = 0; i < M; ++i) {
    Vec lambda = softmax(state.beta[static_cast<std::size_t>(i)]);
    BarycenterProblem prob;
    prob.atoms = atoms;
    prob.weights = lambda;
    prob.kernel = &kernel;
    prob.iters = cfg.L;
    prob.log_domain = cfg.log_domain;
    const bool have_warm =
        cfg.warm_start && static_cast<int>(state.warm_b.size()) == M &&
        !state.warm_b[static_cast<std::size_t>(i)].empty();
    if (have_warm) prob.warm_start = &state.warm_b[static_cast<std::size_t>(i)];

    BarycenterTrace tr;
    try {
      tr = cfg.log_domain ? barycenter_log_domain(prob) : barycenter_forward(prob);
    } catch (const instability_error& e) {
      throw instability_error("datapoint " + std::to_string(i) + ": " + e.what(),
                              e.iteration());
    }
    out.value += loss_value(cfg.loss, tr.P, data[static_cast<std::size_t>(i)], &kernel);
    Vec lg = loss_grad(cfg.loss, tr.P, data[static_cast<std::size_t>(i)], &kernel);
    GradientPack pack = cfg.log_domain
                            ? log_backward_grads(tr, atoms, lambda, kernel, lg)
                            : backward_grads(tr, atoms, lambda, kernel, lg);
    for (int s = 0; s < S; ++s)
      for (int b = 0; b < N; ++b)
        grad_atoms_total[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)] +=
            pack.grad_atoms[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)];
    Vec gb = softmax_vjp(state.beta[static_cast<std::size_t>(i)], pack.grad_weights);
    for (int s = 0; s < S; ++s)
      out.grad_beta[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)] =
          zeta * gb[static_cast<std::size_t>(s)];

    double se = 0.0;
    for (int b = 0; b < N; ++b) {
      double d = tr.P[static_cast<std::size_t>(b)] -
                 data[static_cast<std::size_t>(i)][static_cast<std::size_t>(b)];
      se += d * d;
    }
    out.mean_recon_error += se / M;

    new_warm[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s)
      new_warm[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)] = tr.b_final(s);
  }

  for (int s = 0; s < S; ++s)
    out.grad_alpha[static_cast<std::size_t>(s)] =
        softmax_vjp(state.alpha[static_cast<std::size_t>(s)],
                    grad_atoms_total[static_cast<std::size_t>(s)]);

  out.new_warm = std::move(new_warm);
  if (commit_warm) state.warm_b = out.new_warm;
  return out;
}

struct TrainResult {
  std::vector<Vec> atoms;    // S histograms
  std::vector<Vec> weights;  // M rows on Sigma_S
  std::vector<HistoryRow> history;
  double objective = 0.0;    // best seen
  bool line_search_gave_up = false;
};

namespace detail {

// Flat parameter layout: S*N atom logits then M*S weight logits.
inline void pack_params(const TrainState& st, Vec& x) {
  x.clear();
  for (const Vec& a : st.alpha) x.insert(x.end(), a.begin(), a.end());
  for (const Vec& b : st.beta) x.insert(x.end(), b.begin(), b.end());
}

inline void unpack_params(const Vec& x, TrainState& st) {
  std::size_t k = 0;
  for (Vec& a : st.alpha)
    for (double& v : a) v = x[k++];
  for (Vec& b : st.beta)
    for (double& v : b) v = x[k++];
}

inline void pack_grads(const EnergyEval& e, Vec& g) {
  g.clear();
  for (const Vec& a : e.grad_alpha) g.insert(g.end(), a.begin(), a.end());
  for (const Vec& b : e.grad_beta) g.insert(g.end(), b.begin(), b.end());
}

// Two-loop recursion: applies the limited-memory inverse Hessian to g.
inline Vec lbfgs_direction(const Vec& g, const std::deque<Vec>& s_hist,
                           const std::deque<Vec>& y_hist) {
  Vec q = g;
  const int m = static_cast<int>(s_hist.size());
  std::vector<double> alpha_coef(static_cast<std::size_t>(m)), rho(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j)
    rho[static_cast<std::size_t>(j)] =
        1.0 / vec_dot(y_hist[static_cast<std::size_t>(j)], s_hist[static_cast<std::size_t>(j)]);
  for (int j = m - 1; j >= 0; --j) {
    alpha_coef[static_cast<std::size_t>(j)] =
        rho[static_cast<std::size_t>(j)] * vec_dot(s_hist[static_cast<std::size_t>(j)], q);
    for (std::size_t i = 0; i < q.size(); ++i)
      q[i] -= alpha_coef[static_cast<std::size_t>(j)] * y_hist[static_cast<std::size_t>(j)][i];
  }
  if (m > 0) {
    const Vec& s = s_hist.back();
    const Vec& y = y_hist.back();
    double scale = vec_dot(s, y) / vec_dot(y, y);
    for (double& v : q) v *= scale;
  }
  for (int j = 0; j < m; ++j) {
    double beta = rho[static_cast<std::size_t>(j)] * vec_dot(y_hist[static_cast<std::size_t>(j)], q);
    for (std::size_t i = 0; i < q.size(); ++i)
      q[i] += (alpha_coef[static_cast<std::size_t>(j)] - beta) * s_hist[static_cast<std::size_t>(j)][i];
  }
  return q;
}

}  // namespace detail

/// Refits each datapoint's weights under the decode variant actually used
/// for reconstruction (finite rho and/or tau < 0), whose backward recursion
/// is not available: per datapoint this is a small independent problem over
/// the weight simplex, solved by a deterministic two-level lattice search.
inline std::vector<Vec> refine_weights_decoded(const std::vector<Vec>& atoms,
                                               const std::vector<Vec>& data,
                                               const TrainConfig& cfg,
                                               const Kernel& kernel,
                                               std::vector<Vec> weights,
                                               double* total_loss = nullptr) {
  const int S = static_cast<int>(atoms.size());
  const int M = static_cast<int>(data.size());

  BarycenterProblem prob;
  prob.atoms = atoms;
  prob.kernel = &kernel;
  prob.iters = cfg.L;
  prob.tau = cfg.tau;
  prob.rho = cfg.rho;

  auto decode_loss = [&](const Vec& lambda, const Vec& x) {
    prob.weights = lambda;
    BarycenterTrace tr = barycenter_scaling_loop(prob);
    return loss_value(cfg.loss, tr.P, x, &kernel);
  };

  // all lattice points {k/res} on the simplex, recursively enumerated
  auto enumerate = [&](int res, const std::function<void(const Vec&)>& visit) {
    Vec lambda(static_cast<std::size_t>(S));
    std::function<void(int, int)> rec = [&](int s, int left) {
      if (s == S - 1) {
        lambda[static_cast<std::size_t>(s)] = static_cast<double>(left) / res;
        visit(lambda);
        return;
      }
      for (int k = 0; k <= left; ++k) {
        lambda[static_cast<std::size_t>(s)] = static_cast<double>(k) / res;
        rec(s + 1, left - k);
      }
    };
    rec(0, res);
  };

  double total = 0.0;
  for (int i = 0; i < M; ++i) {
    const Vec& x = data[static_cast<std::size_t>(i)];
    Vec best_lambda = weights[static_cast<std::size_t>(i)];
    double best = decode_loss(best_lambda, x);
    const int coarse = 12;
    enumerate(coarse, [&](const Vec& lam) {
      double v = decode_loss(lam, x);
      if (v < best) {
        best = v;
        best_lambda = lam;
      }
    });
    // refine around the winner at 6x the resolution
    const int fine = coarse * 6;
    Vec center = best_lambda;
    enumerate(fine, [&](const Vec& lam) {
      for (int s = 0; s < S; ++s)
        if (std::abs(lam[static_cast<std::size_t>(s)] - center[static_cast<std::size_t>(s)]) >
            1.5 / coarse)
          return;
      double v = decode_loss(lam, x);
      if (v < best) {
        best = v;
        best_lambda = lam;
      }
    });
    weights[static_cast<std::size_t>(i)] = best_lambda;
    total += best;
  }
  if (total_loss) *total_loss = total;
  return weights;
}

/// Quasi-Newton training: limited-memory two-loop recursion, backtracking
/// line search on sufficient decrease only, curvature memory restarted every
/// restart_every iterations, optional warm starts. Returns the iterate with
/// the best objective seen.
///
/// Gradient-based optimization runs on the plain or log-domain solver; for
/// decode variants without a backward recursion (finite rho, tau < 0) the
/// atoms are learned that way and the per-datapoint weights are then refit
/// against the actual decoder by refine_weights_decoded.
inline TrainResult train(const std::vector<Vec>& data, const TrainConfig& cfg,
                         const Kernel& kernel) {
  cfg.validate();
  if (std::isfinite(cfg.rho) || cfg.tau < 0.0) {
    TrainConfig balanced = cfg;
    balanced.rho = kInf;
    balanced.tau = 0.0;
    TrainResult res = train(data, balanced, kernel);
    double total = 0.0;
    res.weights =
        refine_weights_decoded(res.atoms, data, cfg, kernel, std::move(res.weights), &total);
    res.objective = total;
    return res;
  }
  const int M = static_cast<int>(data.size());
  const int N = kernel.size();
  const int S = cfg.S;
  if (M < 1) throw validation_error("train: no data");
  for (const Vec& col : data)
    if (static_cast<int>(col.size()) != N)
      throw validation_error("train: datapoint length does not match grid");

  TrainState state;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  state.alpha.assign(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(N), 0.0));
  if (cfg.init == AtomInit::RandomAtoms)
    for (Vec& a : state.alpha)
      for (double& v : a) v = gauss(rng);
  state.beta.assign(static_cast<std::size_t>(M), Vec(static_cast<std::size_t>(S), 0.0));
  for (Vec& b : state.beta)
    for (double& v : b) v = gauss(rng);

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  Vec x;
  detail::pack_params(state, x);
  // all evaluations inside the driver leave the warm state alone; the
  // accepted step's scalings are committed once per iteration below
  EnergyEval ev = energy_and_grads(state, data, cfg, kernel, /*commit_warm=*/false);
  Vec g;
  detail::pack_grads(ev, g);
  double f = ev.value;

  TrainResult best;
  best.objective = f;
  Vec best_x = x;
  state.history.push_back({0, f, ev.mean_recon_error, elapsed()});

  std::deque<Vec> s_hist, y_hist;
  bool gave_up = false;

  for (int t = 1; t <= cfg.max_outer_iters; ++t) {
    if (t > 1 && (t - 1) % cfg.restart_every == 0) {
      s_hist.clear();
      y_hist.clear();
    }

    Vec d = detail::lbfgs_direction(g, s_hist, y_hist);
    for (double& v : d) v = -v;
    if (vec_dot(d, g) >= 0.0) {  // not a descent direction: fall back
      s_hist.clear();
      y_hist.clear();
      d = g;
      for (double& v : d) v = -v;
    }

    bool accepted = false;
    bool retried_steepest = false;
    Vec xt, gt;
    double ft = 0.0, recon_t = 0.0;
    std::vector<std::vector<Vec>> accepted_warm;
    while (true) {
      const double slope = vec_dot(g, d);
      double step = 1.0;
      if (s_hist.empty()) {
        double gmax = 0.0;
        for (double v : g) gmax = std::max(gmax, std::abs(v));
        if (gmax > 0.0) step = std::min(1.0, 1.0 / gmax);
      }
      for (int trial = 0; trial < 30; ++trial) {
        xt = x;
        for (std::size_t i = 0; i < x.size(); ++i) xt[i] += step * d[i];
        detail::unpack_params(xt, state);
        bool ok = true;
        try {
          ev = energy_and_grads(state, data, cfg, kernel, /*commit_warm=*/false);
          ft = ev.value;
        } catch (const instability_error&) {
          ok = false;  // unstable trial point: shorten the step
        }
        if (ok && std::isfinite(ft) && ft <= f + 1e-4 * step * slope) {
          detail::pack_grads(ev, gt);
          recon_t = ev.mean_recon_error;
          accepted_warm = std::move(ev.new_warm);
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (accepted || retried_steepest) break;
      // line-search failure: restart the curvature memory and retry once
      // along steepest descent before giving up
      retried_steepest = true;
      if (s_hist.empty()) break;
      s_hist.clear();
      y_hist.clear();
      d = g;
      for (double& v : d) v = -v;
    }
    if (!accepted) {
      gave_up = true;
      break;  // return best seen
    }

    // curvature pair from gradients measured under the same warm state
    Vec sv(x.size()), yv(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      sv[i] = xt[i] - x[i];
      yv[i] = gt[i] - g[i];
    }
    double sy = vec_dot(sv, yv);
    if (sy > 1e-12) {
      s_hist.push_back(std::move(sv));
      y_hist.push_back(std::move(yv));
      while (static_cast<int>(s_hist.size()) > cfg.lbfgs_memory) {
        s_hist.pop_front();
        y_hist.pop_front();
      }
    }
    x = std::move(xt);
    if (cfg.warm_start) {
      // the accepted step advances the accumulated scalings; this shifts the
      // energy, so re-measure the baseline before the next direction
      state.warm_b = std::move(accepted_warm);
      detail::unpack_params(x, state);
      ev = energy_and_grads(state, data, cfg, kernel, /*commit_warm=*/false);
      f = ev.value;
      detail::pack_grads(ev, g);
      recon_t = ev.mean_recon_error;
    } else {
      g = std::move(gt);
      f = ft;
    }
    state.history.push_back({t, f, recon_t, elapsed()});
    if (f < best.objective) {
      best.objective = f;
      best_x = x;
    }
  }

  detail::unpack_params(best_x, state);
  best.atoms.resize(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s)
    best.atoms[static_cast<std::size_t>(s)] = softmax(state.alpha[static_cast<std::size_t>(s)]);
  best.weights.resize(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i)
    best.weights[static_cast<std::size_t>(i)] = softmax(state.beta[static_cast<std::size_t>(i)]);
  best.history = std::move(state.history);
  best.line_search_gave_up = gave_up;
  return best;
}

/// Decodes one weight vector against a set of atoms, honoring the solver
/// variant in cfg (tau, rho, log_domain).
inline Vec reconstruct(const std::vector<Vec>& atoms, const Vec& lambda,
                       const TrainConfig& cfg, const Kernel& kernel) {
  BarycenterProblem prob;
  prob.atoms = atoms;
  prob.weights = lambda;
  prob.kernel = &kernel;
  prob.iters = cfg.L;
  prob.tau = cfg.tau;
  prob.rho = cfg.rho;
  prob.log_domain = cfg.log_domain;
  if (prob.log_domain && (std::isfinite(prob.rho) || prob.tau != 0.0))
    prob.log_domain = false;  // stabilized path covers balanced updates only
  return barycenter_solve(prob).P;
}

/// Relaunches training R times with seeds cfg.seed, cfg.seed+1, ... and
/// keeps the best final objective.
inline TrainResult train_restarts(const std::vector<Vec>& data, const TrainConfig& cfg,
                                  const Kernel& kernel, int restarts) {
  if (restarts < 1) throw parameter_error("train: restarts must be >= 1");
  TrainResult best;
  bool first = true;
  for (int r = 0; r < restarts; ++r) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + static_cast<unsigned long long>(r);
    TrainResult res = train(data, c, kernel);
    if (first || res.objective < best.objective) {
      best = std::move(res);
      first = false;
    }
  }
  return best;
}

}  // namespace wdl

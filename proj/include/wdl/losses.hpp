#pragma once

#include <cmath>
#include <string>

#include "wdl/grid.hpp"
#include "wdl/sinkhorn.hpp"

namespace wdl {

enum class LossType { TotalVariation, Quadratic, KullbackLeibler, Wasserstein };

/// Fitting loss between a reconstruction p and a datapoint q, with the
/// gradient taken in p.
struct LossKind {
  LossType type = LossType::Quadratic;
  int wasserstein_inner = 200;  // Sinkhorn iterations inside the W loss
  // The KL gradient is shipped as log(p/q), which matches finite
  // differences of the KL value; log(p/q) - 1 differs by a constant that is
  // NOT absorbed downstream (the backward recursion is not shift-invariant
  // in the loss gradient). The off-by-constant variant is kept behind this
  // flag for comparison runs.
  bool kl_offset_gradient = false;

  static LossKind total_variation() { return {LossType::TotalVariation}; }
  static LossKind quadratic() { return {LossType::Quadratic}; }
  static LossKind kullback_leibler() { return {LossType::KullbackLeibler}; }
  static LossKind wasserstein(int inner_iters) {
    LossKind k{LossType::Wasserstein};
    k.wasserstein_inner = inner_iters;
    return k;
  }

  std::string name() const {
    switch (type) {
      case LossType::TotalVariation: return "total-variation";
      case LossType::Quadratic: return "quadratic";
      case LossType::KullbackLeibler: return "kullback-leibler";
      case LossType::Wasserstein:
        return "wasserstein:" + std::to_string(wasserstein_inner);
    }
    return "?";
  }
};

namespace detail {

inline void check_kl_domain(const Vec& p, const Vec& q) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (q[i] > 0.0 && p[i] <= 0.0)
      throw domain_error("kl loss: zero reconstruction bin against positive data "
                         "mass; enable histogram jitter");
    if (p[i] > 0.0 && q[i] <= 0.0)
      throw domain_error("kl loss: positive reconstruction bin against zero data "
                         "mass; enable histogram jitter");
  }
}

}  // namespace detail

/// The kernel argument is only read by the Wasserstein loss (it reuses the
/// problem's kernel and gamma).
inline double loss_value(const LossKind& kind, const Vec& p, const Vec& q,
                         const Kernel* kernel = nullptr) {
  if (p.size() != q.size()) throw validation_error("loss: length mismatch");
  switch (kind.type) {
    case LossType::TotalVariation: {
      return l1_diff(p, q);
    }
    case LossType::Quadratic: {
      double s = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - q[i]) * (p[i] - q[i]);
      return s;
    }
    case LossType::KullbackLeibler: {
      detail::check_kl_domain(p, q);
      double s = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
        s += q[i] - p[i];
      }
      return s;
    }
    case LossType::Wasserstein: {
      if (kernel == nullptr) throw validation_error("wasserstein loss: kernel required");
      return ot_cost(p, q, *kernel, kind.wasserstein_inner).value;
    }
  }
  throw validation_error("loss: unknown kind");
}

inline Vec loss_grad(const LossKind& kind, const Vec& p, const Vec& q,
                     const Kernel* kernel = nullptr) {
  if (p.size() != q.size()) throw validation_error("loss: length mismatch");
  Vec g(p.size());
  switch (kind.type) {
    case LossType::TotalVariation: {
      for (std::size_t i = 0; i < p.size(); ++i) {
        double d = p[i] - q[i];
        g[i] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);  // sign(0) := 0
      }
      return g;
    }
    case LossType::Quadratic: {
      for (std::size_t i = 0; i < p.size(); ++i) g[i] = 2.0 * (p[i] - q[i]);
      return g;
    }
    case LossType::KullbackLeibler: {
      detail::check_kl_domain(p, q);
      const double off = kind.kl_offset_gradient ? 1.0 : 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) g[i] = std::log(p[i] / q[i]) - off;
      return g;
    }
    case LossType::Wasserstein: {
      if (kernel == nullptr) throw validation_error("wasserstein loss: kernel required");
      // The entropic OT value computed from the scaling iterations is
      // exactly invariant to rescaling p (scaling p rescales the iterates,
      // leaving the plan unchanged), i.e. it equals the balanced value at
      // p/sum(p). Its full gradient in p is therefore the a-potential
      // projected to <g, p> = 0 and divided by sum(p). On the simplex this
      // is the potential up to a constant; off it (reconstructions at
      // finite L carry a small mass drift) the projection and prefactor
      // are what central differences of the composed energy confirm.
      OtResult r = ot_cost(p, q, *kernel, kind.wasserstein_inner);
      double mass = vec_sum(p);
      Vec out = r.potential_p;
      double c = vec_dot(out, p) / mass;
      for (double& x : out) x = (x - c) / mass;
      return out;
    }
  }
  throw validation_error("loss: unknown kind");
}

}  // namespace wdl

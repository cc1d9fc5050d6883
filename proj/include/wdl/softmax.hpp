#pragma once

#include <algorithm>
#include <cmath>

#include "wdl/grid.hpp"

namespace wdl {

/// Unconstrained logits parameterizing a simplex point through softmax.
struct SimplexParam {
  Vec logits;

  explicit SimplexParam(Vec u) : logits(std::move(u)) {
    if (!all_finite(logits))
      throw validation_error("simplex param: logits must be finite");
  }
};

/// Shift-invariant softmax; output is on the simplex up to floating point.
inline Vec softmax(const Vec& logits) {
  if (!all_finite(logits))
    throw validation_error("softmax: logits must be finite");
  double mx = *std::max_element(logits.begin(), logits.end());
  Vec p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    s += p[i];
  }
  for (double& x : p) x /= s;
  return p;
}

inline Vec softmax(const SimplexParam& param) { return softmax(param.logits); }

/// Transposed softmax Jacobian applied to a cotangent:
/// (I - F 1^T) diag(F) c = F .* (c - <F, c>). Annihilates constant cotangents.
inline Vec softmax_vjp(const Vec& logits, const Vec& cotangent) {
  if (cotangent.size() != logits.size())
    throw validation_error("softmax_vjp: length mismatch");
  Vec f = softmax(logits);
  double inner = vec_dot(f, cotangent);
  Vec out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i] * (cotangent[i] - inner);
  return out;
}

inline Vec softmax_vjp(const SimplexParam& param, const Vec& cotangent) {
  return softmax_vjp(param.logits, cotangent);
}

}  // namespace wdl

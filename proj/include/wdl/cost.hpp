#pragma once

#include <cmath>
#include <vector>

#include "wdl/grid.hpp"

namespace wdl {

// Dense cost/kernel matrices are only materialized up to this many bins;
// larger grids must use a separable cost.
inline constexpr int kDenseLimit = 4096;

enum class CostKind { SquaredEuclideanOnGrid, ExplicitDense };

/// Ground cost between grid bins: squared Euclidean distance between bin
/// centers, or a user-supplied dense matrix.
struct CostSpec {
  CostKind kind = CostKind::SquaredEuclideanOnGrid;
  Grid grid;
  Vec matrix;  // N*N row-major, explicit-dense only

  static CostSpec squared_euclidean(Grid grid) {
    CostSpec c;
    c.kind = CostKind::SquaredEuclideanOnGrid;
    c.grid = std::move(grid);
    return c;
  }

  static CostSpec explicit_dense(Grid grid, Vec matrix) {
    CostSpec c;
    c.kind = CostKind::ExplicitDense;
    c.grid = std::move(grid);
    c.matrix = std::move(matrix);
    c.validate();
    return c;
  }

  void validate() const {
    if (kind != CostKind::ExplicitDense) return;
    const int n = grid.size();
    if (static_cast<int>(matrix.size()) != n * n)
      throw validation_error("cost: explicit matrix has wrong shape");
    for (int i = 0; i < n; ++i) {
      if (matrix[static_cast<std::size_t>(i) * n + i] != 0.0)
        throw validation_error("cost: explicit matrix must have zero diagonal");
      for (int j = 0; j < n; ++j) {
        double c = matrix[static_cast<std::size_t>(i) * n + j];
        if (!std::isfinite(c) || c < 0.0)
          throw validation_error("cost: explicit matrix must be finite and nonnegative");
      }
    }
  }
};

namespace detail {

// Decomposes flat row-major index into per-axis indices.
inline void unflatten(const Grid& g, int idx, std::vector<int>& out) {
  out.resize(g.dims.size());
  for (int a = g.axes() - 1; a >= 0; --a) {
    out[static_cast<std::size_t>(a)] = idx % g.dims[static_cast<std::size_t>(a)];
    idx /= g.dims[static_cast<std::size_t>(a)];
  }
}

}  // namespace detail

/// Materializes the N x N cost matrix.
inline Vec build_cost(const CostSpec& spec) {
  spec.validate();
  const int n = spec.grid.size();
  if (n > kDenseLimit)
    throw validation_error("cost: dense matrices limited to " +
                           std::to_string(kDenseLimit) + " bins");
  if (spec.kind == CostKind::ExplicitDense) return spec.matrix;

  Vec c(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<int> xi, xj;
  for (int i = 0; i < n; ++i) {
    detail::unflatten(spec.grid, i, xi);
    for (int j = 0; j < n; ++j) {
      detail::unflatten(spec.grid, j, xj);
      double d2 = 0.0;
      for (int a = 0; a < spec.grid.axes(); ++a) {
        double d = (xi[static_cast<std::size_t>(a)] - xj[static_cast<std::size_t>(a)]) *
                   spec.grid.spacing[static_cast<std::size_t>(a)];
        d2 += d * d;
      }
      c[static_cast<std::size_t>(i) * n + j] = d2;
    }
  }
  return c;
}

}  // namespace wdl

#pragma once

#include <algorithm>
#include <cmath>

#include "fpq/kernels.hpp"

namespace fpq::kernels::detail {

/// Largest p with unit * 2^p <= ax, i.e. floor(log2(ax) + bias) evaluated
/// exactly on the rounded grid. ax must be positive and finite.
inline int binade_index(double ax, const FpGrid& g) {
  const int e = std::ilogb(ax);
  const double mant = std::scalbn(ax, -e);
  return e - g.unit_exp - (mant < g.unit_mant ? 1 : 0);
}

/// Spacing of the grid cell containing ax; binades <= 1 share the
/// subnormal spacing 2^(1 - b - m).
inline double grid_scale(double ax, const FpGrid& g) {
  const int binade = ax == 0.0 ? 1 : binade_index(ax, g);
  return std::ldexp(g.unit, std::max(binade, 1) - g.m_bits);
}

inline double quantize_on_grid(double v, const FpGrid& g) {
  const double ax = std::min(std::fabs(v), g.cmax);
  const double scale = grid_scale(ax, g);
  const double q = std::min(std::nearbyint(ax / scale) * scale, g.cmax);
  return std::copysign(q, v);
}

}  // namespace fpq::kernels::detail

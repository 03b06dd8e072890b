#include "fpq/fpcodec.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <regex>

#include "fpq/error.hpp"
#include "kernels/grid_math.hpp"

namespace fpq {
namespace {

int max_binade(int e_bits) { return (1 << e_bits) - 1; }

double grid_unit(double bias) {
  return static_cast<double>(std::exp2l(-static_cast<long double>(bias)));
}

}  // namespace

std::string FpFormat::encoding_name() const {
  return "E" + std::to_string(e_bits) + "M" + std::to_string(m_bits);
}

double default_bias(int e_bits) { return std::ldexp(1.0, e_bits - 1); }

FpFormat make_format(int e_bits, int m_bits, std::optional<double> bias) {
  if (e_bits < 1 || e_bits > 8) {
    throw ValidationError("exponent bits must be in [1, 8], got " +
                          std::to_string(e_bits));
  }
  if (m_bits < 0 || m_bits > 23) {
    throw ValidationError("mantissa bits must be in [0, 23], got " +
                          std::to_string(m_bits));
  }
  FpFormat fmt{e_bits, m_bits, bias.value_or(default_bias(e_bits))};
  if (!std::isfinite(fmt.bias)) throw ValidationError("bias must be finite");
  // Keep every code and spacing a normal 64-bit value so power-of-two
  // scaling stays exact.
  const double unit = grid_unit(fmt.bias);
  const double cmax = max_representable(fmt);
  if (!(unit > 0.0) || !std::isfinite(cmax) || cmax > FLT_MAX ||
      std::ldexp(unit, 1 - m_bits) < DBL_MIN * 0x1p60) {
    throw ValidationError("bias " + std::to_string(fmt.bias) +
                          " puts the format outside the representable range");
  }
  return fmt;
}

std::pair<int, int> parse_encoding(const std::string& text) {
  static const std::regex re(R"([Ee](\d+)[Mm](\d+))");
  std::smatch match;
  if (!std::regex_match(text, match, re)) {
    throw UsageError("cannot parse encoding '" + text + "' (expected ExMy)");
  }
  return {std::stoi(match[1]), std::stoi(match[2])};
}

double max_representable(const FpFormat& fmt) {
  const double top_code = std::ldexp(1.0, fmt.m_bits + 1) - 1.0;
  return std::ldexp(top_code * grid_unit(fmt.bias),
                    max_binade(fmt.e_bits) - fmt.m_bits);
}

double bias_from_cmax(int e_bits, int m_bits, double cmax) {
  if (!(cmax > 0.0) || !std::isfinite(cmax)) {
    throw ValidationError("clipping maximum must be positive and finite");
  }
  const long double span = 2.0L - std::ldexp(1.0L, -m_bits);
  return static_cast<double>(static_cast<long double>(max_binade(e_bits)) -
                             std::log2l(static_cast<long double>(cmax) / span));
}

kernels::FpGrid make_grid(const FpFormat& fmt) {
  kernels::FpGrid g;
  g.unit = grid_unit(fmt.bias);
  g.unit_exp = std::ilogb(g.unit);
  g.unit_mant = std::scalbn(g.unit, -g.unit_exp);
  g.cmax = max_representable(fmt);
  g.m_bits = fmt.m_bits;
  return g;
}

std::vector<double> enumerate_codes(const FpFormat& fmt) {
  const double unit = grid_unit(fmt.bias);
  const int steps = 1 << fmt.m_bits;
  std::vector<double> codes;
  codes.reserve(2 * static_cast<std::size_t>(steps) * (max_binade(fmt.e_bits) + 1));
  for (int k = 0; k < steps; ++k) {
    codes.push_back(std::ldexp(k * unit, 1 - fmt.m_bits));
  }
  for (int p = 1; p <= max_binade(fmt.e_bits); ++p) {
    for (int k = 0; k < steps; ++k) {
      codes.push_back(std::ldexp((steps + k) * unit, p - fmt.m_bits));
    }
  }
  const std::size_t positive = codes.size();
  for (std::size_t i = 1; i < positive; ++i) codes.push_back(-codes[i]);
  std::sort(codes.begin(), codes.end());
  codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
  return codes;
}

double element_scale(double x, const FpFormat& fmt) {
  const auto g = make_grid(fmt);
  return kernels::detail::grid_scale(std::min(std::fabs(x), g.cmax), g);
}

double quantize_value(double x, const FpFormat& fmt) {
  return kernels::detail::quantize_on_grid(x, make_grid(fmt));
}

void quantize_fp(std::span<const float> x, std::span<float> out,
                 const FpFormat& fmt) {
  if (x.size() != out.size()) {
    throw ValidationError("quantize_fp: input/output length mismatch");
  }
  kernels::active().quantize_fp(x.data(), out.data(), x.size(), make_grid(fmt));
}

Tensor quantize_fp(const Tensor& x, const FpFormat& fmt) {
  check_finite(x);
  Tensor out(x.name, x.shape);
  quantize_fp(x.values(), out.values(), fmt);
  return out;
}

GridCell grid_cell(double x, const kernels::FpGrid& grid) {
  GridCell cell;
  cell.saturated = std::fabs(x) > grid.cmax;
  cell.clipped = std::clamp(x, -grid.cmax, grid.cmax);
  cell.scale = kernels::detail::grid_scale(std::fabs(cell.clipped), grid);
  cell.floor_index = std::floor(cell.clipped / cell.scale);
  return cell;
}

double quantize_directed(double x, const kernels::FpGrid& grid, bool round_up) {
  const auto cell = grid_cell(x, grid);
  if (cell.saturated) return std::copysign(grid.cmax, x);
  return std::clamp(cell.scale * (cell.floor_index + (round_up ? 1.0 : 0.0)),
                    -grid.cmax, grid.cmax);
}

Tensor quantize_fp_directed(const Tensor& x, const FpFormat& fmt, const Tensor& mask) {
  require_same_shape(x, mask, "directed rounding mask");
  check_finite(x);
  const auto grid = make_grid(fmt);
  Tensor out(x.name, x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask.data[i] != 0.0f && mask.data[i] != 1.0f) {
      throw ValidationError("rounding mask values must be 0 or 1");
    }
    out.data[i] = static_cast<float>(quantize_directed(x.data[i], grid, mask.data[i] != 0.0f));
  }
  return out;
}

IntGrid make_int_grid(std::span<const float> x, IntQuantConfig cfg) {
  if (cfg.bits < 2 || cfg.bits > 24) {
    throw ValidationError("integer bitwidth must be in [2, 24]");
  }
  IntGrid grid;
  grid.bits = cfg.bits;
  if (x.empty()) {
    grid.degenerate = true;
    return grid;
  }
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (!(*hi > *lo)) {
    grid.degenerate = true;
    return grid;
  }
  grid.scale = (static_cast<double>(*hi) - *lo) / (std::ldexp(1.0, cfg.bits) - 1.0);
  grid.zero_point = -std::nearbyint(*lo / grid.scale);
  return grid;
}

double quantize_int_value(double x, const IntGrid& grid) {
  if (grid.degenerate) return x;
  const double top = std::ldexp(1.0, grid.bits) - 1.0;
  const double q = std::clamp(std::nearbyint(x / grid.scale) + grid.zero_point, 0.0, top);
  return grid.scale * (q - grid.zero_point);
}

IntQuantResult quantize_int(const Tensor& x, IntQuantConfig cfg) {
  check_finite(x);
  IntQuantResult result{Tensor(x.name, x.shape), make_int_grid(x.values(), cfg)};
  for (std::size_t i = 0; i < x.size(); ++i) {
    result.values.data[i] =
        static_cast<float>(quantize_int_value(x.data[i], result.grid));
  }
  return result;
}

}  // namespace fpq

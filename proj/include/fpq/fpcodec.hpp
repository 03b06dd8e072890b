#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpq/kernels.hpp"
#include "fpq/tensor.hpp"

namespace fpq {

/// Sign-magnitude minifloat with e exponent bits, m mantissa bits and a
/// real-valued exponent bias. Exponent field 0 encodes subnormals; no codes
/// are reserved for infinity or NaN.
struct FpFormat {
  int e_bits = 4;
  int m_bits = 3;
  double bias = 8.0;

  /// Total width including the sign bit.
  int bitwidth() const noexcept { return 1 + e_bits + m_bits; }

  /// "E4M3" style encoding label (bias not included).
  std::string encoding_name() const;

  bool operator==(const FpFormat&) const = default;
};

/// 2^(e-1), the conventional bias.
double default_bias(int e_bits);

/// Validating constructor. An empty bias selects default_bias(e_bits).
FpFormat make_format(int e_bits, int m_bits,
                     std::optional<double> bias = std::nullopt);

/// Parses "E2M1" into (e, m).
std::pair<int, int> parse_encoding(const std::string& text);

/// c = (2 - 2^-m) * 2^(2^e - b - 1).
double max_representable(const FpFormat& fmt);

/// Bias whose max_representable equals cmax.
double bias_from_cmax(int e_bits, int m_bits, double cmax);

/// Every distinct representable value, ascending. Intended for small formats.
std::vector<double> enumerate_codes(const FpFormat& fmt);

/// Grid spacing at x (x already clipped to [-c, c]).
double element_scale(double x, const FpFormat& fmt);

/// Clip to [-c, c] and round to the nearest code, ties to the even grid index.
double quantize_value(double x, const FpFormat& fmt);

kernels::FpGrid make_grid(const FpFormat& fmt);

/// Elementwise quantize_value through the active kernel table. out may alias x.
void quantize_fp(std::span<const float> x, std::span<float> out,
                 const FpFormat& fmt);

/// Rejects non-finite inputs.
Tensor quantize_fp(const Tensor& x, const FpFormat& fmt);

/// Position of x on the grid: the clipped value, the spacing of its cell and
/// the index of the cell's lower edge.
struct GridCell {
  double clipped = 0.0;
  double scale = 1.0;
  double floor_index = 0.0;
  bool saturated = false;  // |x| > c
};

GridCell grid_cell(double x, const kernels::FpGrid& grid);

/// Rounds down (round_up = false) or up within x's grid cell; saturated
/// values pin to +-c.
double quantize_directed(double x, const kernels::FpGrid& grid, bool round_up);

/// Directed rounding elementwise; mask holds 0 (down) or 1 (up).
Tensor quantize_fp_directed(const Tensor& x, const FpFormat& fmt, const Tensor& mask);

struct IntQuantConfig {
  int bits = 8;
};

/// Affine grid derived from a tensor's range.
struct IntGrid {
  double scale = 1.0;
  double zero_point = 0.0;
  int bits = 8;
  bool degenerate = false;  // max == min; quantization is the identity
};

IntGrid make_int_grid(std::span<const float> x, IntQuantConfig cfg);

double quantize_int_value(double x, const IntGrid& grid);

struct IntQuantResult {
  Tensor values;
  IntGrid grid;
};

IntQuantResult quantize_int(const Tensor& x, IntQuantConfig cfg);

}  // namespace fpq

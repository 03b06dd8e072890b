#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fpq/manifest.hpp"
#include "fpq/tensor.hpp"
#include "fpq/tensorstore.hpp"

namespace fpq {

enum class LayerType { kLinear, kConv2d, kSilu, kGroupNorm, kSkipSave, kSkipConcat };

const char* to_string(LayerType type);

/// One pipeline stage. Fields not used by a layer type are ignored.
struct LayerDesc {
  LayerType type = LayerType::kLinear;
  std::string name;

  // linear / conv2d
  std::string weight;
  std::optional<std::string> bias;
  int stride = 1;
  int padding = 0;

  // groupnorm
  int groups = 1;
  std::optional<std::string> gamma;
  std::optional<std::string> beta;
  double eps = 1e-5;

  // skip_save / skip_concat
  std::string slot;
  int axis = 1;

  /// Activation record quantizing the layer input (linear/conv2d) or the
  /// incoming tensor of a skip_concat.
  std::string act;
  /// Activation record quantizing the saved tensor at a skip_concat.
  std::string skip_act;

  bool is_quantizable() const noexcept {
    return type == LayerType::kLinear || type == LayerType::kConv2d ||
           type == LayerType::kSkipConcat;
  }
};

struct PipelineDesc {
  std::vector<LayerDesc> layers;

  const LayerDesc* find_by_weight(const std::string& weight) const;
};

/// Parses the pipeline JSON ({"layers": [...]}) and fills default names:
/// layer "<type><index>", act "<name>.in", skip_act "<name>.skip".
PipelineDesc pipeline_from_json(const std::string& text);
std::string pipeline_to_json(const PipelineDesc& desc);
PipelineDesc load_pipeline(const std::filesystem::path& path);

/// Weight references resolve and every concat slot was saved earlier.
void check_references(const PipelineDesc& desc, const TensorMap& weights);

/// A tensor the format search visits, in breadth-first network order.
struct QuantTarget {
  std::string name;
  TensorKind kind = TensorKind::kWeight;
  bool quantizable = true;  // false: normalization parameters, recorded passthrough
};

/// conv/linear weights and inputs, split skip/incoming records at concats,
/// and groupnorm parameters as passthrough. A conv/linear fed directly by a
/// skip_concat gets no input record: the split quantization covers it.
std::vector<QuantTarget> quantization_targets(const PipelineDesc& desc);

// Reference layer operations. 64-bit accumulation, 32-bit storage.

/// W (out, in); A (..., in) -> (..., out).
Tensor linear_forward(const Tensor& w, const Tensor* bias, const Tensor& a);

/// W (co, ci, kh, kw); A (b, ci, h, w); zero padding, cross-correlation.
Tensor conv2d_forward(const Tensor& w, const Tensor* bias, const Tensor& a,
                      int stride, int padding);

Tensor silu(const Tensor& x);

/// x (b, c, ...); statistics per (sample, group).
Tensor group_norm(const Tensor& x, int groups, const Tensor* gamma,
                  const Tensor* beta, double eps = 1e-5);

Tensor concat(const Tensor& a, const Tensor& b, int axis);

struct ConvGeometry {
  std::int64_t batch = 0, in_ch = 0, height = 0, width = 0;
  std::int64_t out_ch = 0, kernel_h = 0, kernel_w = 0;
  std::int64_t out_h = 0, out_w = 0;
  int stride = 1, padding = 0;

  std::int64_t patch() const noexcept { return in_ch * kernel_h * kernel_w; }
  std::int64_t positions() const noexcept { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Shape& w, const Shape& a, int stride, int padding);

/// Unfolds batch item b into a (positions x patch) row-major matrix, patch
/// ordered (ci, kh, kw); padded taps are zero.
template <typename T>
void im2col(const float* input, const ConvGeometry& g, std::int64_t b, T* cols) {
  const std::int64_t plane = g.height * g.width;
  const float* base = input + b * g.in_ch * plane;
  T* row = cols;
  for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
    for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
      for (std::int64_t c = 0; c < g.in_ch; ++c) {
        for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
          const std::int64_t y = oy * g.stride - g.padding + ky;
          for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
            const std::int64_t x = ox * g.stride - g.padding + kx;
            const bool inside = y >= 0 && y < g.height && x >= 0 && x < g.width;
            *row++ = inside ? static_cast<T>(base[c * plane + y * g.width + x]) : T(0);
          }
        }
      }
    }
  }
}

/// Applies a manifest record to an activation or weight tensor. Weight
/// records with a rounding mask round in the stored direction.
Tensor apply_record(const Tensor& x, const QuantRecord& record, const Tensor* mask);

struct LayerReport {
  std::string name;
  int step = 0;
  double mse = 0.0;
  double sqnr_db = 0.0;  // +inf when identical, NaN when the reference is zero
  double output_sparsity = 0.0;
  std::string format;    // weight (or incoming activation) format label
  std::optional<double> bias;
};

struct TraceEntry {
  std::string layer;
  int step = 0;
  Tensor output;
  // skip_concat only: the two halves after their separate quantization
  std::optional<Tensor> quantized_incoming;
  std::optional<Tensor> quantized_skip;
  std::optional<Tensor> saved_skip;
};

struct RunReport {
  std::vector<LayerReport> layers;  // one per quantizable layer per step
  std::vector<double> step_output_mse;
  Tensor reference_output;
  Tensor output;
  std::vector<TraceEntry> trace;    // quantized run, when requested
};

struct RunOptions {
  int steps = 1;
  bool keep_trace = false;
};

/// Runs the full-precision pipeline and, in lockstep, the quantized one
/// (manifest absent: both are full precision). With steps > 1 each run feeds
/// its own output back as the next input.
RunReport run_pipeline(const PipelineDesc& desc, const TensorMap& weights,
                       const QuantManifest* manifest, const TensorMap* masks,
                       const Tensor& input, const RunOptions& options = {});

/// Records, for every input sample and step, the tensor arriving at each
/// activation record point (before its quantization) under
/// (act name, step, sample). Inputs of conv/linear layers fed by a concat are
/// captured too, for rounding learning, although no record quantizes them.
/// A manifest makes the capture run quantized.
CalibSet capture_activations(const PipelineDesc& desc, const TensorMap& weights,
                             const QuantManifest* manifest, const TensorMap* masks,
                             const std::vector<Tensor>& inputs, int steps);

}  // namespace fpq

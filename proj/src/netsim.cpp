#include "fpq/netsim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>

#include <json.hpp>

#include "fpq/error.hpp"
#include "fpq/fpcodec.hpp"
#include "fpq/kernels.hpp"

namespace fpq {
namespace {

using nlohmann::json;

LayerType parse_layer_type(const std::string& s) {
  if (s == "linear") return LayerType::kLinear;
  if (s == "conv2d") return LayerType::kConv2d;
  if (s == "silu") return LayerType::kSilu;
  if (s == "groupnorm") return LayerType::kGroupNorm;
  if (s == "skip_save") return LayerType::kSkipSave;
  if (s == "skip_concat") return LayerType::kSkipConcat;
  throw ValidationError("unknown layer type '" + s + "'");
}

const Tensor& lookup(const TensorMap& weights, const std::string& name) {
  auto it = weights.find(name);
  if (it == weights.end()) throw ValidationError("unresolved tensor name '" + name + "'");
  return it->second;
}

const Tensor* lookup_optional(const TensorMap& weights, const std::optional<std::string>& name) {
  return name ? &lookup(weights, *name) : nullptr;
}

/// W (rows, cols) -> W^T (cols, rows), plus an optional trailing bias row
/// so the GEMM adds it after the k-sequential sum.
std::vector<float> transpose_with_bias(const float* w, std::int64_t rows, std::int64_t cols,
                                       const Tensor* bias) {
  const std::int64_t k = cols + (bias ? 1 : 0);
  std::vector<float> t(static_cast<std::size_t>(k * rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) t[c * rows + r] = w[r * cols + c];
  }
  if (bias) {
    for (std::int64_t r = 0; r < rows; ++r) t[cols * rows + r] = bias->data[r];
  }
  return t;
}

std::string format_label(const QuantRecord* r) {
  if (!r || r->mode == QuantMode::kPassthrough) return "fp32";
  if (r->mode == QuantMode::kInt) return "int" + std::to_string(r->bits);
  return r->format.encoding_name();
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

/// Quantization context for one run; absent manifest means full precision.
class Quantizer {
 public:
  Quantizer(const QuantManifest* manifest, const TensorMap* masks)
      : manifest_(manifest), masks_(masks) {}

  const QuantRecord* record(const std::string& name) const {
    return manifest_ ? manifest_->find(name) : nullptr;
  }

  Tensor activation(const Tensor& x, const std::string& name) const {
    const auto* r = record(name);
    if (!r || r->mode == QuantMode::kPassthrough) return x;
    return apply_record(x, *r, nullptr);
  }

  const Tensor& weight(const Tensor& w) const {
    const auto* r = record(w.name);
    if (!r || r->mode == QuantMode::kPassthrough) return w;
    auto cached = cache_.find(w.name);
    if (cached != cache_.end()) return cached->second;
    const Tensor* mask = nullptr;
    if (r->rounding_mask_ref) {
      if (!masks_) throw ValidationError("manifest references rounding masks but none were loaded");
      mask = &lookup(*masks_, *r->rounding_mask_ref);
    }
    return cache_.emplace(w.name, apply_record(w, *r, mask)).first->second;
  }

 private:
  const QuantManifest* manifest_;
  const TensorMap* masks_;
  mutable std::map<std::string, Tensor> cache_;
};

struct LayerOutput {
  std::size_t layer = 0;
  Tensor output;
  std::optional<Tensor> quantized_incoming, quantized_skip, saved_skip;
};

using CaptureFn = std::function<void(const std::string& act, const Tensor& value)>;

/// One forward pass. Quantizable layers append their outputs to `outputs`.
Tensor forward_once(const PipelineDesc& desc, const TensorMap& weights, const Quantizer& q,
                    Tensor x, std::vector<LayerOutput>* outputs, const CaptureFn& capture,
                    bool keep_all) {
  std::map<std::string, Tensor> slots;
  bool fed_by_concat = false;
  for (std::size_t i = 0; i < desc.layers.size(); ++i) {
    const auto& layer = desc.layers[i];
    LayerOutput record;
    record.layer = i;
    switch (layer.type) {
      case LayerType::kLinear:
      case LayerType::kConv2d: {
        if (capture) capture(layer.act, x);
        if (!fed_by_concat) x = q.activation(x, layer.act);
        const Tensor& w = q.weight(lookup(weights, layer.weight));
        const Tensor* bias = lookup_optional(weights, layer.bias);
        x = layer.type == LayerType::kLinear
                ? linear_forward(w, bias, x)
                : conv2d_forward(w, bias, x, layer.stride, layer.padding);
        break;
      }
      case LayerType::kSilu:
        x = silu(x);
        break;
      case LayerType::kGroupNorm:
        x = group_norm(x, layer.groups, lookup_optional(weights, layer.gamma),
                       lookup_optional(weights, layer.beta), layer.eps);
        break;
      case LayerType::kSkipSave:
        slots[layer.slot] = x;
        break;
      case LayerType::kSkipConcat: {
        auto it = slots.find(layer.slot);
        if (it == slots.end()) {
          throw ValidationError("skip slot '" + layer.slot + "' concatenated before it was saved");
        }
        if (capture) {
          capture(layer.act, x);
          capture(layer.skip_act, it->second);
        }
        Tensor incoming = q.activation(x, layer.act);
        Tensor skip = q.activation(it->second, layer.skip_act);
        x = concat(incoming, skip, layer.axis);
        if (keep_all) {
          record.quantized_incoming = std::move(incoming);
          record.quantized_skip = std::move(skip);
          record.saved_skip = it->second;
        }
        break;
      }
    }
    fed_by_concat = layer.type == LayerType::kSkipConcat;
    if (outputs && layer.is_quantizable()) {
      record.output = x;
      outputs->push_back(std::move(record));
    }
  }
  return x;
}

}  // namespace

const char* to_string(LayerType type) {
  switch (type) {
    case LayerType::kLinear:
      return "linear";
    case LayerType::kConv2d:
      return "conv2d";
    case LayerType::kSilu:
      return "silu";
    case LayerType::kGroupNorm:
      return "groupnorm";
    case LayerType::kSkipSave:
      return "skip_save";
    case LayerType::kSkipConcat:
      return "skip_concat";
  }
  return "linear";
}

const LayerDesc* PipelineDesc::find_by_weight(const std::string& weight) const {
  for (const auto& l : layers) {
    if ((l.type == LayerType::kLinear || l.type == LayerType::kConv2d) && l.weight == weight) {
      return &l;
    }
  }
  return nullptr;
}

PipelineDesc pipeline_from_json(const std::string& text) {
  PipelineDesc desc;
  try {
    const auto doc = json::parse(text);
    std::set<std::string> names;
    std::size_t index = 0;
    for (const auto& item : doc.at("layers")) {
      LayerDesc l;
      l.type = parse_layer_type(item.at("type").get<std::string>());
      l.name = item.value("name", std::string(to_string(l.type)) + std::to_string(index));
      switch (l.type) {
        case LayerType::kLinear:
        case LayerType::kConv2d:
          l.weight = item.at("w").get<std::string>();
          if (item.contains("bias") && !item.at("bias").is_null()) {
            l.bias = item.at("bias").get<std::string>();
          }
          l.stride = item.value("stride", 1);
          l.padding = item.value("padding", 0);
          break;
        case LayerType::kGroupNorm:
          l.groups = item.at("groups").get<int>();
          if (item.contains("gamma")) l.gamma = item.at("gamma").get<std::string>();
          if (item.contains("beta")) l.beta = item.at("beta").get<std::string>();
          l.eps = item.value("eps", 1e-5);
          break;
        case LayerType::kSkipSave:
          l.slot = item.at("slot").get<std::string>();
          break;
        case LayerType::kSkipConcat:
          l.slot = item.at("slot").get<std::string>();
          l.axis = item.value("axis", 1);
          break;
        case LayerType::kSilu:
          break;
      }
      l.act = item.value("act", l.name + ".in");
      l.skip_act = item.value("skip_act", l.name + ".skip");
      if (!names.insert(l.name).second) {
        throw ValidationError("duplicate layer name '" + l.name + "'");
      }
      desc.layers.push_back(std::move(l));
      ++index;
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed pipeline description: ") + e.what());
  }
  return desc;
}

std::string pipeline_to_json(const PipelineDesc& desc) {
  json layers = json::array();
  for (const auto& l : desc.layers) {
    json item{{"type", to_string(l.type)}, {"name", l.name}};
    switch (l.type) {
      case LayerType::kLinear:
      case LayerType::kConv2d:
        item["w"] = l.weight;
        if (l.bias) item["bias"] = *l.bias;
        if (l.type == LayerType::kConv2d) {
          item["stride"] = l.stride;
          item["padding"] = l.padding;
        }
        item["act"] = l.act;
        break;
      case LayerType::kGroupNorm:
        item["groups"] = l.groups;
        if (l.gamma) item["gamma"] = *l.gamma;
        if (l.beta) item["beta"] = *l.beta;
        item["eps"] = l.eps;
        break;
      case LayerType::kSkipSave:
        item["slot"] = l.slot;
        break;
      case LayerType::kSkipConcat:
        item["slot"] = l.slot;
        item["axis"] = l.axis;
        item["act"] = l.act;
        item["skip_act"] = l.skip_act;
        break;
      case LayerType::kSilu:
        break;
    }
    layers.push_back(std::move(item));
  }
  return json{{"layers", layers}}.dump(2) + "\n";
}

PipelineDesc load_pipeline(const std::filesystem::path& path) {
  return pipeline_from_json(read_text(path));
}

void check_references(const PipelineDesc& desc, const TensorMap& weights) {
  std::set<std::string> saved;
  for (const auto& l : desc.layers) {
    switch (l.type) {
      case LayerType::kLinear:
      case LayerType::kConv2d:
        lookup(weights, l.weight);
        lookup_optional(weights, l.bias);
        break;
      case LayerType::kGroupNorm:
        lookup_optional(weights, l.gamma);
        lookup_optional(weights, l.beta);
        break;
      case LayerType::kSkipSave:
        saved.insert(l.slot);
        break;
      case LayerType::kSkipConcat:
        if (!saved.count(l.slot)) {
          throw ValidationError("layer '" + l.name + "' concatenates unsaved slot '" + l.slot + "'");
        }
        break;
      case LayerType::kSilu:
        break;
    }
  }
}

std::vector<QuantTarget> quantization_targets(const PipelineDesc& desc) {
  std::vector<QuantTarget> out;
  bool fed_by_concat = false;
  for (const auto& l : desc.layers) {
    switch (l.type) {
      case LayerType::kLinear:
      case LayerType::kConv2d:
        out.push_back({l.weight, TensorKind::kWeight, true});
        if (!fed_by_concat) out.push_back({l.act, TensorKind::kActivation, true});
        break;
      case LayerType::kSkipConcat:
        out.push_back({l.act, TensorKind::kActivation, true});
        out.push_back({l.skip_act, TensorKind::kActivation, true});
        break;
      case LayerType::kGroupNorm:
        if (l.gamma) out.push_back({*l.gamma, TensorKind::kWeight, false});
        if (l.beta) out.push_back({*l.beta, TensorKind::kWeight, false});
        break;
      case LayerType::kSilu:
      case LayerType::kSkipSave:
        break;
    }
    fed_by_concat = l.type == LayerType::kSkipConcat;
  }
  return out;
}

Tensor linear_forward(const Tensor& w, const Tensor* bias, const Tensor& a) {
  if (w.rank() != 2) throw ValidationError("linear weight '" + w.name + "' must be rank 2");
  const auto out_f = w.dim(0);
  const auto in_f = w.dim(1);
  if (a.rank() < 1 || a.shape.back() != in_f) {
    throw ValidationError("linear '" + w.name + "': input shape " + shape_to_string(a.shape) +
                          " does not end in " + std::to_string(in_f));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != out_f)) {
    throw ValidationError("linear '" + w.name + "': bias must have shape (" +
                          std::to_string(out_f) + ")");
  }
  const std::int64_t rows = static_cast<std::int64_t>(a.size()) / in_f;
  Shape out_shape = a.shape;
  out_shape.back() = out_f;
  Tensor out("", out_shape);

  const auto wt = transpose_with_bias(w.data.data(), out_f, in_f, bias);
  const auto& ops = kernels::active();
  if (!bias) {
    ops.gemm_f32(a.data.data(), wt.data(), out.data.data(), rows, in_f, out_f);
    return out;
  }
  std::vector<float> augmented(static_cast<std::size_t>(rows * (in_f + 1)));
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy_n(a.data.data() + r * in_f, in_f, augmented.data() + r * (in_f + 1));
    augmented[r * (in_f + 1) + in_f] = 1.0f;
  }
  ops.gemm_f32(augmented.data(), wt.data(), out.data.data(), rows, in_f + 1, out_f);
  return out;
}

ConvGeometry conv_geometry(const Shape& w, const Shape& a, int stride, int padding) {
  if (w.size() != 4 || a.size() != 4) {
    throw ValidationError("conv2d expects rank-4 weight and input, got " + shape_to_string(w) +
                          " and " + shape_to_string(a));
  }
  if (stride < 1 || padding < 0) throw ValidationError("conv2d: invalid stride/padding");
  ConvGeometry g;
  g.batch = a[0];
  g.in_ch = a[1];
  g.height = a[2];
  g.width = a[3];
  g.out_ch = w[0];
  g.kernel_h = w[2];
  g.kernel_w = w[3];
  g.stride = stride;
  g.padding = padding;
  if (w[1] != g.in_ch) {
    throw ValidationError("conv2d: weight expects " + std::to_string(w[1]) +
                          " input channels, input has " + std::to_string(g.in_ch));
  }
  const auto ph = g.height + 2 * padding;
  const auto pw = g.width + 2 * padding;
  if (g.kernel_h > ph || g.kernel_w > pw) {
    throw ValidationError("conv2d: kernel larger than padded input");
  }
  g.out_h = (ph - g.kernel_h) / stride + 1;
  g.out_w = (pw - g.kernel_w) / stride + 1;
  return g;
}

Tensor conv2d_forward(const Tensor& w, const Tensor* bias, const Tensor& a, int stride,
                      int padding) {
  const auto g = conv_geometry(w.shape, a.shape, stride, padding);
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.out_ch)) {
    throw ValidationError("conv2d '" + w.name + "': bias must have shape (" +
                          std::to_string(g.out_ch) + ")");
  }
  const std::int64_t patch = g.patch();
  const std::int64_t k = patch + (bias ? 1 : 0);
  const std::int64_t positions = g.positions();
  const auto wt = transpose_with_bias(w.data.data(), g.out_ch, patch, bias);

  Tensor out("", {g.batch, g.out_ch, g.out_h, g.out_w});
  std::vector<float> cols(static_cast<std::size_t>(positions * patch));
  std::vector<float> augmented(bias ? static_cast<std::size_t>(positions * k) : 0);
  std::vector<float> result(static_cast<std::size_t>(positions * g.out_ch));
  const auto& ops = kernels::active();
  for (std::int64_t b = 0; b < g.batch; ++b) {
    im2col(a.data.data(), g, b, cols.data());
    const float* lhs = cols.data();
    if (bias) {
      for (std::int64_t p = 0; p < positions; ++p) {
        std::copy_n(cols.data() + p * patch, patch, augmented.data() + p * k);
        augmented[p * k + patch] = 1.0f;
      }
      lhs = augmented.data();
    }
    ops.gemm_f32(lhs, wt.data(), result.data(), positions, k, g.out_ch);
    float* dst = out.data.data() + b * g.out_ch * positions;
    for (std::int64_t p = 0; p < positions; ++p) {
      for (std::int64_t o = 0; o < g.out_ch; ++o) dst[o * positions + p] = result[p * g.out_ch + o];
    }
  }
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out(x.name, x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data[i];
    out.data[i] = static_cast<float>(v / (1.0 + std::exp(-v)));
  }
  return out;
}

Tensor group_norm(const Tensor& x, int groups, const Tensor* gamma, const Tensor* beta,
                  double eps) {
  if (x.rank() < 2) throw ValidationError("group_norm expects (batch, channels, ...)");
  const auto batch = x.dim(0);
  const auto channels = x.dim(1);
  if (groups < 1 || channels % groups != 0) {
    throw ValidationError("group_norm: " + std::to_string(groups) + " groups do not divide " +
                          std::to_string(channels) + " channels");
  }
  for (const Tensor* p : {gamma, beta}) {
    if (p && (p->rank() != 1 || p->dim(0) != channels)) {
      throw ValidationError("group_norm: affine parameters must have shape (" +
                            std::to_string(channels) + ")");
    }
  }
  const std::int64_t inner = static_cast<std::int64_t>(x.size()) / (batch * channels);
  const std::int64_t per_group = channels / groups;
  const std::int64_t count = per_group * inner;
  Tensor out(x.name, x.shape);
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t grp = 0; grp < groups; ++grp) {
      const std::int64_t start = (b * channels + grp * per_group) * inner;
      double sum = 0.0;
      for (std::int64_t i = 0; i < count; ++i) sum += x.data[start + i];
      const double mean = sum / count;
      double sq = 0.0;
      for (std::int64_t i = 0; i < count; ++i) {
        const double d = x.data[start + i] - mean;
        sq += d * d;
      }
      const double inv_std = 1.0 / std::sqrt(sq / count + eps);
      for (std::int64_t i = 0; i < count; ++i) {
        const std::int64_t c = grp * per_group + i / inner;
        const double g = gamma ? gamma->data[c] : 1.0;
        const double bt = beta ? beta->data[c] : 0.0;
        out.data[start + i] =
            static_cast<float>((x.data[start + i] - mean) * inv_std * g + bt);
      }
    }
  }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != b.rank() || axis < 0 || axis >= static_cast<int>(a.rank())) {
    throw ValidationError("concat: incompatible ranks or axis");
  }
  for (std::size_t d = 0; d < a.rank(); ++d) {
    if (static_cast<int>(d) != axis && a.shape[d] != b.shape[d]) {
      throw ValidationError("concat: shapes " + shape_to_string(a.shape) + " and " +
                            shape_to_string(b.shape) + " differ off axis " +
                            std::to_string(axis));
    }
  }
  std::int64_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= a.shape[d];
  std::int64_t inner = 1;
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.shape[d];
  const std::int64_t ca = a.shape[axis] * inner;
  const std::int64_t cb = b.shape[axis] * inner;
  Shape shape = a.shape;
  shape[axis] += b.shape[axis];
  Tensor out("", shape);
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(a.data.data() + o * ca, ca, out.data.data() + o * (ca + cb));
    std::copy_n(b.data.data() + o * cb, cb, out.data.data() + o * (ca + cb) + ca);
  }
  return out;
}

Tensor apply_record(const Tensor& x, const QuantRecord& record, const Tensor* mask) {
  switch (record.mode) {
    case QuantMode::kPassthrough:
      return x;
    case QuantMode::kInt:
      return quantize_int(x, IntQuantConfig{record.bits}).values;
    case QuantMode::kFp:
      if (mask) return quantize_fp_directed(x, record.format, *mask);
      return quantize_fp(x, record.format);
  }
  return x;
}

RunReport run_pipeline(const PipelineDesc& desc, const TensorMap& weights,
                       const QuantManifest* manifest, const TensorMap* masks,
                       const Tensor& input, const RunOptions& options) {
  if (options.steps < 1) throw ValidationError("steps must be at least 1");
  check_references(desc, weights);
  if (manifest && masks) validate_masks(*manifest, weights, *masks);

  const Quantizer full(nullptr, nullptr);
  const Quantizer quant(manifest, masks);
  RunReport report;
  Tensor ref = input;
  Tensor test = input;
  for (int step = 0; step < options.steps; ++step) {
    std::vector<LayerOutput> ref_layers, test_layers;
    ref = forward_once(desc, weights, full, std::move(ref), &ref_layers, nullptr, false);
    test = forward_once(desc, weights, quant, std::move(test), &test_layers, nullptr,
                        options.keep_trace);
    for (std::size_t i = 0; i < ref_layers.size(); ++i) {
      const auto& layer = desc.layers[ref_layers[i].layer];
      const Tensor& r = ref_layers[i].output;
      const Tensor& t = test_layers[i].output;
      LayerReport lr;
      lr.name = layer.name;
      lr.step = step;
      lr.mse = mse(r, t);
      lr.sqnr_db = sparsity(r) == 1.0 ? nan() : sqnr_db(r, t);
      lr.output_sparsity = sparsity(t);
      const QuantRecord* rec =
          quant.record(layer.type == LayerType::kSkipConcat ? layer.act : layer.weight);
      lr.format = format_label(rec);
      if (rec && rec->mode == QuantMode::kFp) lr.bias = rec->format.bias;
      report.layers.push_back(std::move(lr));
      if (options.keep_trace) {
        TraceEntry entry{layer.name, step, t, std::move(test_layers[i].quantized_incoming),
                         std::move(test_layers[i].quantized_skip),
                         std::move(test_layers[i].saved_skip)};
        report.trace.push_back(std::move(entry));
      }
    }
    report.step_output_mse.push_back(mse(ref, test));
  }
  report.reference_output = std::move(ref);
  report.output = std::move(test);
  return report;
}

CalibSet capture_activations(const PipelineDesc& desc, const TensorMap& weights,
                             const QuantManifest* manifest, const TensorMap* masks,
                             const std::vector<Tensor>& inputs, int steps) {
  if (steps < 1) throw ValidationError("steps must be at least 1");
  check_references(desc, weights);
  const Quantizer q(manifest, masks);
  CalibSet out;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    Tensor x = inputs[j];
    for (int step = 0; step < steps; ++step) {
      auto record = [&](const std::string& act, const Tensor& value) {
        out.add(CalibKey{act, step, static_cast<int>(j)}, value);
      };
      x = forward_once(desc, weights, q, std::move(x), nullptr, record, false);
    }
  }
  return out;
}

}  // namespace fpq

#include "cli_commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

#include "fpq/error.hpp"
#include "fpq/fpcodec.hpp"
#include "fpq/manifest.hpp"
#include "fpq/netsim.hpp"
#include "fpq/tensorstore.hpp"

namespace fs = std::filesystem;

namespace fpq::cli {
namespace {

std::string num(double v, int precision = 9) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

void header(const char* command, const std::vector<std::pair<std::string, std::string>>& settings) {
  std::printf("fpq %s |", command);
  for (const auto& [k, v] : settings) std::printf(" %s=%s", k.c_str(), v.c_str());
  std::printf("\n");
}

std::string label(const QuantRecord* r) {
  if (!r || r->mode == QuantMode::kPassthrough) return "fp32";
  if (r->mode == QuantMode::kInt) return "int" + std::to_string(r->bits);
  return r->format.encoding_name();
}

std::string bias_text(const QuantRecord* r) {
  return r && r->mode == QuantMode::kFp ? num(r->format.bias, 17) : "";
}

std::optional<QuantManifest> maybe_manifest(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_manifest(path);
}

TensorMap masks_for(const std::string& path, const std::optional<QuantManifest>& manifest) {
  if (!manifest) return {};
  return load_manifest_masks(path, *manifest);
}

const Tensor* mask_of(const QuantRecord& r, const TensorMap& masks) {
  if (!r.rounding_mask_ref) return nullptr;
  auto it = masks.find(*r.rounding_mask_ref);
  if (it == masks.end()) {
    throw ValidationError("rounding mask '" + *r.rounding_mask_ref + "' not found");
  }
  return &it->second;
}

Tensor apply_manifest(const Tensor& t, const QuantManifest* manifest, const TensorMap& masks) {
  const auto* r = manifest ? manifest->find(t.name) : nullptr;
  if (!r || r->mode == QuantMode::kPassthrough) return t;
  return apply_record(t, *r, mask_of(*r, masks));
}

std::vector<float> pooled_sample(const CalibSet& cs, const std::string& act, int n,
                                 std::uint64_t seed) {
  const auto available = cs.samples(act).size();
  if (available == 0) {
    throw ValidationError("no activation samples for record '" + act + "'");
  }
  const int count = std::min<int>(n, static_cast<int>(available));
  const auto picked = sample_uniform(cs, act, count, seed);
  std::vector<const Tensor*> refs;
  for (const auto& t : picked) refs.push_back(&t);
  return pool_samples(refs);
}

Tensor pick_input(const std::vector<Tensor>& tensors, const std::string& name) {
  if (tensors.empty()) throw ValidationError("input container holds no tensors");
  if (name.empty()) return tensors.front();
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw ValidationError("input tensor '" + name + "' not found");
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace

int run_inspect(const InspectArgs& args) {
  const auto tensors = read_container(args.container);
  const auto manifest = maybe_manifest(args.manifest);
  std::printf("%s: %zu tensors\n", args.container.c_str(), tensors.size());
  for (const auto& t : tensors) {
    double lo = 0, hi = 0, sum = 0;
    if (t.size() > 0) {
      const auto [mn, mx] = std::minmax_element(t.data.begin(), t.data.end());
      lo = *mn;
      hi = *mx;
    }
    for (float v : t.data) sum += v;
    const double mean = t.size() ? sum / static_cast<double>(t.size()) : 0.0;
    std::printf("  %-28s %-16s numel=%-8zu min=%-12s max=%-12s mean=%-12s zeros=%s", t.name.c_str(),
                shape_to_string(t.shape).c_str(), t.size(), num(lo, 6).c_str(), num(hi, 6).c_str(),
                num(mean, 6).c_str(), num(sparsity(t), 6).c_str());
    if (manifest) {
      const auto* r = manifest->find(t.name);
      if (r && r->mode == QuantMode::kFp) {
        const auto q = quantize_fp(t, r->format);
        std::size_t off = 0;
        for (std::size_t i = 0; i < t.size(); ++i) off += q.data[i] != t.data[i];
        std::printf("  %s b=%s codes=%s", r->format.encoding_name().c_str(),
                    num(r->format.bias, 6).c_str(),
                    off == 0 ? "representable" : (std::to_string(off) + " off-grid").c_str());
      }
    }
    std::printf("\n");
    if (args.values > 0) {
      const auto n = std::min<std::size_t>(static_cast<std::size_t>(args.values), t.size());
      std::printf("    ");
      for (std::size_t i = 0; i < n; ++i) std::printf("%s ", num(t.data[i]).c_str());
      std::printf("\n");
    }
  }
  return 0;
}

int run_quantize(const QuantizeArgs& args) {
  const int modes = !args.format.empty() + !args.manifest.empty() + args.int_mode;
  if (modes != 1) throw UsageError("choose exactly one of --format, --manifest or --int");
  if (args.bias && args.format.empty()) throw UsageError("--bias needs --format");
  auto tensors = read_container(args.input);
  for (const auto& name : args.tensors) {
    if (std::none_of(tensors.begin(), tensors.end(), [&](const Tensor& t) { return t.name == name; })) {
      throw ValidationError("tensor '" + name + "' not in " + args.input);
    }
  }
  const auto manifest = maybe_manifest(args.manifest);
  const auto masks = masks_for(args.manifest, manifest);
  std::optional<FpFormat> fmt;
  if (!args.format.empty()) {
    const auto [e, m] = parse_encoding(args.format);
    fmt = make_format(e, m, args.bias);
  }
  header("quantize", {{"mode", fmt ? fmt->encoding_name() + " b=" + num(fmt->bias) : args.int_mode ? "int" + std::to_string(args.bits) : "manifest"}});
  for (auto& t : tensors) {
    if (!args.tensors.empty() &&
        std::find(args.tensors.begin(), args.tensors.end(), t.name) == args.tensors.end()) {
      continue;
    }
    Tensor q;
    std::string what;
    if (fmt) {
      q = quantize_fp(t, *fmt);
      what = fmt->encoding_name();
    } else if (args.int_mode) {
      q = quantize_int(t, {args.bits}).values;
      what = "int" + std::to_string(args.bits);
    } else {
      q = apply_manifest(t, &*manifest, masks);
      what = label(manifest->find(t.name));
    }
    std::printf("  %-28s %-6s mse=%-12s zeros %s -> %s\n", t.name.c_str(), what.c_str(),
                num(mse(t, q), 6).c_str(), num(sparsity(t), 6).c_str(), num(sparsity(q), 6).c_str());
    t.data = std::move(q.data);
  }
  write_container(args.output, tensors);
  std::printf("wrote %s\n", args.output.c_str());
  return 0;
}

int run_search(const SearchArgs& args) {
  if (args.propagate && (args.pipeline.empty() || args.inputs.empty())) {
    throw UsageError("--propagate needs --pipeline and --inputs");
  }
  if (args.init_samples < 1) throw UsageError("--init-samples must be at least 1");
  if (args.steps < 1) throw UsageError("--steps must be at least 1");
  const auto model_tensors = read_container(args.model);
  const auto weights = to_map(model_tensors);
  CalibSet acts;
  if (!args.acts.empty()) acts = CalibSet::from_tensors(read_container(args.acts));

  std::optional<PipelineDesc> desc;
  std::vector<QuantTarget> order;
  if (!args.pipeline.empty()) {
    desc = load_pipeline(args.pipeline);
    check_references(*desc, weights);
    order = quantization_targets(*desc);
  } else {
    for (const auto& t : model_tensors) order.push_back({t.name, TensorKind::kWeight, true});
    for (const auto& name : acts.tensor_names()) order.push_back({name, TensorKind::kActivation, true});
  }

  AssignOptions options;
  options.weight_space = SearchSpace::for_bitwidth(args.bitwidth, args.bias_candidates);
  options.activation_space = SearchSpace::for_bitwidth(args.act_bitwidth, args.bias_candidates);
  options.int_mode = args.int_mode;
  options.int_bits = args.bits;

  std::vector<Tensor> inputs;
  if (args.propagate) inputs = read_container(args.inputs);
  if (args.propagate) {
    options.activation_source = [&](const std::string& act, const QuantManifest& partial) {
      const auto cs = capture_activations(*desc, weights, &partial, nullptr, inputs, args.steps);
      return pooled_sample(cs, act, args.init_samples, args.seed);
    };
  } else {
    options.activation_source = [&](const std::string& act, const QuantManifest&) {
      return pooled_sample(acts, act, args.init_samples, args.seed);
    };
  }
  options.on_result = [](const QuantTarget& t, const SearchResult& r) {
    std::printf("  %-28s %-10s -> %s b=%s mse=%s (%d candidates evaluated)\n", t.name.c_str(),
                to_string(t.kind), r.format.encoding_name().c_str(), num(r.format.bias, 6).c_str(),
                num(r.mse, 6).c_str(), r.evaluated);
  };

  header("search", {{"bitwidth", std::to_string(args.bitwidth)},
                    {"act-bitwidth", std::to_string(args.act_bitwidth)},
                    {"bias-candidates", std::to_string(args.bias_candidates)},
                    {"init-samples", std::to_string(args.init_samples)},
                    {"seed", std::to_string(args.seed)},
                    {"propagate", args.propagate ? "on" : "off"},
                    {"int", args.int_mode ? std::to_string(args.bits) : "off"}});
  const auto manifest = assign_model(weights, acts, order, options);
  if (args.int_mode) {
    for (const auto& r : manifest.records) {
      std::printf("  %-28s %-10s -> %s\n", r.name.c_str(), to_string(r.kind), label(&r).c_str());
    }
  }
  save_manifest(args.output, manifest);
  std::printf("wrote %s (%zu records)\n", args.output.c_str(), manifest.records.size());
  return 0;
}

int run_learn(const LearnArgs& args) {
  LearnConfig cfg = args.config;
  if (args.optimizer == "adam") {
    cfg.optimizer = Optimizer::kAdam;
  } else if (args.optimizer == "sgd") {
    cfg.optimizer = Optimizer::kSgd;
  } else {
    throw UsageError("--optimizer must be adam or sgd");
  }
  cfg.validate();
  if (args.calib_samples < 0) throw UsageError("--calib-samples must be non-negative");

  const auto weights = to_map(read_container(args.model));
  auto manifest = load_manifest(args.manifest);
  const auto calib = CalibSet::from_tensors(read_container(args.calib));
  const auto desc = load_pipeline(args.pipeline);
  check_references(desc, weights);
  auto masks = load_manifest_masks(args.manifest, manifest);

  auto learnable = [](const QuantRecord& r) {
    return r.kind == TensorKind::kWeight && r.mode == QuantMode::kFp && r.format.bitwidth() == 4;
  };
  std::vector<std::string> names = args.tensors;
  for (const auto& name : names) {
    const auto* r = manifest.find(name);
    if (!r) throw ValidationError("no manifest record for '" + name + "'");
    if (r->kind == TensorKind::kActivation) {
      throw ValidationError("learn-rounding applies to weights only; '" + name +
                            "' is an activation record");
    }
    if (!learnable(*r)) {
      throw ValidationError("'" + name + "' is not a 4-bit floating-point weight record");
    }
  }
  if (names.empty()) {
    for (const auto& r : manifest.records) {
      if (learnable(r)) names.push_back(r.name);
    }
  }
  if (names.empty()) throw ValidationError("manifest has no 4-bit floating-point weight records");

  header("learn-rounding",
         {{"iters", std::to_string(cfg.iterations)}, {"lr", num(cfg.step_size)},
          {"batch", std::to_string(cfg.batch_size)}, {"reg", num(cfg.reg_weight)},
          {"optimizer", args.optimizer}, {"seed", std::to_string(cfg.seed)},
          {"calib-samples", args.calib_samples ? std::to_string(args.calib_samples) : "all"}});

  for (const auto& name : names) {
    const auto* layer = desc.find_by_weight(name);
    if (!layer) throw ValidationError("no conv/linear layer uses weight '" + name + "'");
    auto& record = *manifest.find(name);
    const auto& w = weights.at(name);

    CalibSet subset;
    if (args.calib_samples > 0) {
      if (calib.samples(layer->act).empty()) {
        throw ValidationError("no calibration samples for '" + layer->act + "'");
      }
      const auto picked = sample_uniform(calib, layer->act, args.calib_samples, cfg.seed);
      for (std::size_t j = 0; j < picked.size(); ++j) {
        subset.add({layer->act, 0, static_cast<int>(j)}, picked[j]);
      }
    }
    const CalibSet& source = args.calib_samples > 0 ? subset : calib;

    TrainTrace trace;
    const auto state = train(init_state(w, record.format), w, source, *layer, cfg, &trace);
    auto fin = finalize(state);

    std::vector<Tensor> samples;
    for (const auto* t : source.samples(layer->act)) samples.push_back(*t);
    const LayerObjective objective(*layer, w, samples);
    std::vector<std::size_t> all(samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto rtn = quantize_fp(w, record.format);
    const double learned_mse =
        objective.output_mse({fin.weights.data.begin(), fin.weights.data.end()}, all);
    const double rtn_mse = objective.output_mse({rtn.data.begin(), rtn.data.end()}, all);
    std::printf("  %-28s objective %s -> %s, polarized %s%%, output mse %s (nearest %s)\n",
                name.c_str(), num(trace.initial_full, 6).c_str(), num(trace.final_full, 6).c_str(),
                num(100.0 * polarization(state), 4).c_str(), num(learned_mse, 6).c_str(),
                num(rtn_mse, 6).c_str());

    fin.mask.name = name + ".mask";
    record.rounding_mask_ref = fin.mask.name;
    masks[fin.mask.name] = std::move(fin.mask);
  }

  fs::path masks_path = args.masks_out;
  if (masks_path.empty()) masks_path = fs::path(args.output).replace_extension(".masks.fpqt");
  std::vector<Tensor> mask_list;
  for (auto& [n, t] : masks) mask_list.push_back(t);
  write_container(masks_path, mask_list);
  const auto manifest_dir = fs::absolute(args.output).parent_path();
  manifest.mask_container = fs::absolute(masks_path).lexically_relative(manifest_dir).generic_string();
  save_manifest(args.output, manifest);
  std::printf("wrote %s and %s\n", args.output.c_str(), masks_path.string().c_str());
  return 0;
}

int run_simulate(const SimulateArgs& args) {
  if (args.steps < 1) throw UsageError("--steps must be at least 1");
  const auto desc = load_pipeline(args.pipeline);
  const auto weights = to_map(read_container(args.model));
  check_references(desc, weights);
  const auto manifest = maybe_manifest(args.manifest);
  const auto masks = masks_for(args.manifest, manifest);
  if (manifest) validate_masks(*manifest, weights, masks);
  const auto input = pick_input(read_container(args.input), args.input_name);

  header("simulate", {{"steps", std::to_string(args.steps)},
                      {"manifest", manifest ? args.manifest : "none"}});
  const auto report = run_pipeline(desc, weights, manifest ? &*manifest : nullptr,
                                   manifest ? &masks : nullptr, input, {args.steps, false});
  std::ostringstream csv;
  csv << "layer_name,mse,sqnr_db,sparsity,format,bias\n";
  std::printf("  %-20s %-14s %-10s %-10s %-8s %s\n", "layer", "mse", "sqnr_db", "sparsity", "format",
              "bias");
  for (const auto& l : report.layers) {
    const std::string name = args.steps > 1 ? l.name + "@t" + std::to_string(l.step) : l.name;
    const std::string bias = l.bias ? num(*l.bias, 17) : "";
    std::printf("  %-20s %-14s %-10s %-10s %-8s %s\n", name.c_str(), num(l.mse, 6).c_str(),
                num(l.sqnr_db, 5).c_str(), num(l.output_sparsity, 5).c_str(), l.format.c_str(),
                bias.c_str());
    csv << csv_escape(name) << ',' << num(l.mse, 17) << ',' << num(l.sqnr_db, 17) << ','
        << num(l.output_sparsity, 17) << ',' << csv_escape(l.format) << ',' << bias << '\n';
  }
  for (std::size_t s = 0; s < report.step_output_mse.size(); ++s) {
    std::printf("  step %zu output mse %s\n", s, num(report.step_output_mse[s], 6).c_str());
  }
  if (!args.csv.empty()) write_text_atomic(args.csv, csv.str());
  if (!args.output.empty()) {
    Tensor out = report.output;
    out.name = "output";
    write_container(args.output, {out});
  }
  return 0;
}

int run_report(const ReportArgs& args) {
  const auto tensors = read_container(args.model);
  const auto manifest = maybe_manifest(args.manifest);
  const auto masks = masks_for(args.manifest, manifest);
  header("report", {{"manifest", manifest ? args.manifest : "none"}});
  std::ostringstream csv;
  csv << "tensor,numel,format,bias,sparsity_raw,sparsity_quant,mse,sqnr_db\n";
  std::printf("  %-28s %-8s %-7s %-10s %-10s %-12s %s\n", "tensor", "numel", "format", "zeros",
              "zeros(q)", "mse", "sqnr_db");
  double zeros_raw = 0, zeros_q = 0, total = 0;
  for (const auto& t : tensors) {
    const auto* r = manifest ? manifest->find(t.name) : nullptr;
    const auto q = apply_manifest(t, manifest ? &*manifest : nullptr, masks);
    const double s_raw = sparsity(t), s_q = sparsity(q);
    const double err = mse(t, q);
    const double sq = t.size() ? sqnr_db(t, q) : INFINITY;
    zeros_raw += s_raw * static_cast<double>(t.size());
    zeros_q += s_q * static_cast<double>(t.size());
    total += static_cast<double>(t.size());
    std::printf("  %-28s %-8zu %-7s %-10s %-10s %-12s %s\n", t.name.c_str(), t.size(),
                label(r).c_str(), num(s_raw, 5).c_str(), num(s_q, 5).c_str(), num(err, 6).c_str(),
                num(sq, 5).c_str());
    csv << csv_escape(t.name) << ',' << t.size() << ',' << label(r) << ',' << bias_text(r) << ','
        << num(s_raw, 17) << ',' << num(s_q, 17) << ',' << num(err, 17) << ',' << num(sq, 17)
        << '\n';
  }
  const double raw = total ? zeros_raw / total : 0.0, quant = total ? zeros_q / total : 0.0;
  std::printf("  overall zero fraction %s -> %s", num(raw, 6).c_str(), num(quant, 6).c_str());
  if (raw > 0) std::printf(" (%sx)", num(quant / raw, 4).c_str());
  std::printf("\n");
  if (!args.csv.empty()) write_text_atomic(args.csv, csv.str());
  return 0;
}

}  // namespace fpq::cli

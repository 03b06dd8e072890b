// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "fpq/adaround.hpp"
#include "fpq/formatsearch.hpp"
#include "fpq/fpcodec.hpp"
#include "fpq/manifest.hpp"
#include "fpq/netsim.hpp"
#include "fpq/tensorstore.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "support/rounding_oracle.hpp"

namespace fs = std::filesystem;
using namespace fpq;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const std::vector<std::pair<int, int>> kEncodings = {{2, 5}, {3, 4}, {4, 3}, {5, 2}, {1, 2}, {2, 1}};

// 1: quantizer vs nearest enumerated code.
Outcome code_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> gauss(0.0, 1.0);
  long mismatches = 0, skipped = 0, checked = 0;
  for (auto [e, m] : kEncodings) {
    std::uniform_real_distribution<double> bias_dist(default_bias(e) - 6.0, default_bias(e) + 6.0);
    for (int b = 0; b < 20; ++b) {
      const FpFormat f = make_format(e, m, bias_dist(rng));
      const auto pos = oracle::positive_codes(f);
      const double c = max_representable(f);
      std::uniform_real_distribution<double> octave(-((1 << e) + m + 1.0), 1.5);
      std::vector<float> x(10000), q(10000);
      for (auto& v : x) v = static_cast<float>(c * gauss(rng) * std::exp2(octave(rng)));
      // exact midpoints exercise the tie rule
      for (std::size_t i = 1; i < pos.size() && i < 200; ++i) {
        x[i] = static_cast<float>(0.5 * (pos[i - 1] + pos[i]));
      }
      quantize_fp(x, q, f);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const auto want = oracle::nearest_code(x[i], pos);
        if (!want) {
          ++skipped;
          continue;
        }
        ++checked;
        if (q[i] != static_cast<float>(*want)) ++mismatches;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 30.0,
          fmt("%ld values, %ld mismatches, %ld near-ties skipped, %.2f s", checked, mismatches,
              skipped, secs)};
}

// 2: format constants and bias round trip.
Outcome format_sanity() {
  const bool c1 = max_representable(make_format(4, 3, 8.0)) == 240.0;
  const bool c2 = max_representable(make_format(5, 2, 16.0)) == 57344.0;
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int e = 1; e <= 8; ++e) {
    for (int m = 0; m <= 7; ++m) {
      std::uniform_real_distribution<double> bias_dist(default_bias(e) - 8.0, default_bias(e) + 8.0);
      for (int i = 0; i < 200; ++i) {
        const double b = bias_dist(rng);
        const double back = bias_from_cmax(e, m, max_representable({e, m, b}));
        // ulp of the larger operand of the final subtraction (2^e - 1) - log2(.)
        const double mag = std::max({std::fabs(b), std::ldexp(1.0, e) - 1.0, std::fabs(b - std::ldexp(1.0, e) + 1.0)});
        const double ulp = std::nextafter(mag, INFINITY) - mag;
        worst = std::max(worst, std::fabs(back - b) / ulp);
      }
    }
  }
  const bool exact = bias_from_cmax(4, 3, 240.0) == 8.0 && bias_from_cmax(2, 1, 3.0) == 2.0 &&
                     bias_from_cmax(2, 1, 6.0) == 1.0;
  return {c1 && c2 && exact && worst <= 1.0,
          fmt("E4M3/8 -> 240 %s, E5M2/16 -> 57344 %s, worst round trip %.3f ulp", c1 ? "ok" : "BAD",
              c2 ? "ok" : "BAD", worst)};
}

Tensor random_tensor(std::mt19937_64& rng, int index) {
  std::uniform_int_distribution<int> len(64, 512);
  std::uniform_real_distribution<double> log_scale(-8.0, 8.0);
  const int n = len(rng);
  const double scale = std::exp2(log_scale(rng));
  Tensor t("t" + std::to_string(index), {n});
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::exponential_distribution<double> ex(1.0);
  for (auto& v : t.data) {
    double r = 0.0;
    switch (index % 4) {
      case 0: r = g(rng); break;
      case 1: r = u(rng); break;
      case 2: r = (u(rng) < 0 ? -1 : 1) * ex(rng); break;
      default: r = g(rng) * (u(rng) > 0.95 ? 20.0 : 1.0);
    }
    v = static_cast<float>(r * scale);
  }
  return t;
}

// 3: search vs exhaustive scan.
Outcome search_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(99);
  int agree = 0, total = 0;
  bool counts = true;
  for (int i = 0; i < 50; ++i) {
    const auto t = random_tensor(rng, i);
    for (const auto& space : {SearchSpace::fp8(), SearchSpace::fp4()}) {
      const auto r = search_tensor(t.values(), space);
      const auto o = oracle::exhaustive_scan(t.values(), space.encodings, space.n_bias);
      counts = counts && r.evaluated == static_cast<int>(space.size());
      agree += r.candidate_index == o.candidate_index;
      ++total;
    }
  }
  // Tensors made only of codes of a format with max |x| = c.
  int zero_ok = 0, zero_total = 0;
  for (auto [e, m] : kEncodings) {
    const FpFormat f = make_format(e, m, default_bias(e) + (e + m) % 3 - 1);
    const auto codes = enumerate_codes(f);
    std::uniform_int_distribution<std::size_t> pick(0, codes.size() - 1);
    Tensor t("codes", {300});
    for (auto& v : t.data) v = static_cast<float>(codes[pick(rng)]);
    t.data[0] = static_cast<float>(codes.back());
    const auto space = SearchSpace::for_bitwidth(f.bitwidth());
    const auto r = search_tensor(t.values(), space);
    const auto o = oracle::exhaustive_scan(t.values(), space.encodings, space.n_bias);
    zero_ok += r.mse == 0.0 && o.mse == 0.0 && r.candidate_index == o.candidate_index &&
               quantize_fp(t, r.format) == t;
    ++zero_total;
  }
  const double secs = seconds_since(t0);
  return {agree == total && counts && zero_ok == zero_total && secs < 60.0,
          fmt("%d/%d candidate indices agree (444/222 evaluated: %s), zero-MSE %d/%d, %.2f s", agree,
              total, counts ? "yes" : "no", zero_ok, zero_total, secs)};
}

// 4: analytic gradient vs central differences.
Outcome gradient_check() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> alpha_dist(-3.0, 3.0);
  double worst = 0.0;
  int checked = 0, excluded = 0;
  auto run = [&](const LayerDesc& layer, const Tensor& w, const std::vector<Tensor>& batch,
                 const FpFormat& f) {
    auto st = init_state(w, f);
    for (auto& a : st.alpha) a = alpha_dist(rng);
    LearnConfig cfg;
    const auto lg = loss_and_grad(st, w, batch, layer, cfg);
    const auto soft = soft_values(st);
    for (std::size_t i = 0; i < st.size(); ++i) {
      if (st.clipped[i] || st.cmax - std::fabs(soft[i]) < 1e-6) {
        ++excluded;
        continue;
      }
      const double eps = 1e-4;
      auto plus = st, minus = st;
      plus.alpha[i] += eps;
      minus.alpha[i] -= eps;
      const double fd = (oracle::reference_loss(plus, w, batch, layer, cfg.reg_weight) -
                         oracle::reference_loss(minus, w, batch, layer, cfg.reg_weight)) /
                        (2.0 * eps);
      const double denom = std::max({std::fabs(fd), std::fabs(lg.grad[i]), 1e-8});
      worst = std::max(worst, std::fabs(fd - lg.grad[i]) / denom);
      ++checked;
    }
  };
  LayerDesc lin;
  lin.type = LayerType::kLinear;
  lin.act = "fc.in";
  std::vector<Tensor> lin_batch;
  for (int i = 0; i < 4; ++i) lin_batch.push_back(fixtures::gaussian("a", {4, 8}, 100 + i));
  run(lin, fixtures::gaussian("w", {8, 8}, 1), lin_batch, make_format(2, 1, 1.5));
  LayerDesc conv;
  conv.type = LayerType::kConv2d;
  conv.act = "conv.in";
  conv.padding = 1;
  std::vector<Tensor> conv_batch;
  for (int i = 0; i < 3; ++i) conv_batch.push_back(fixtures::gaussian("a", {1, 2, 5, 5}, 200 + i));
  run(conv, fixtures::gaussian("w", {2, 2, 3, 3}, 2, 0.5), conv_batch, make_format(1, 2, 1.0));
  return {worst < 1e-4 && checked + excluded == 100,
          fmt("%d alpha entries checked (%d at the clamp excluded), max relative error %.2e", checked,
              excluded, worst)};
}

// 5: rounding learning vs round-to-nearest.
Outcome rounding_efficacy() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto w = fixtures::gaussian("fc.w", {64, 64}, 5);
  // Correlated inputs with a decaying spectrum and a DC offset.
  std::mt19937_64 rng(55);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> mix(64 * 64);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) mix[r * 64 + c] = g(rng) * std::pow(0.85, r);
  auto draw = [&](int count) {
    std::vector<Tensor> out;
    for (int s = 0; s < count; ++s) {
      std::vector<double> z(64);
      for (auto& v : z) v = g(rng);
      Tensor a("fc.in", {1, 64});
      for (int c = 0; c < 64; ++c) {
        double acc = 0.5;
        for (int r = 0; r < 64; ++r) acc += z[r] * mix[r * 64 + c];
        a.data[c] = static_cast<float>(acc);
      }
      out.push_back(a);
    }
    return out;
  };
  const auto calib_samples = draw(256);
  const auto held_out = draw(256);
  CalibSet calib;
  for (int s = 0; s < 256; ++s) calib.add({"fc.in", s / 16, s % 16}, calib_samples[s]);

  const auto winner = search_tensor(w.values(), SearchSpace::fp4());
  LayerDesc layer;
  layer.type = LayerType::kLinear;
  layer.name = "fc";
  layer.weight = "fc.w";
  layer.act = "fc.in";
  const LearnConfig cfg;
  const auto st = train(init_state(w, winner.format), w, calib, layer, cfg);
  const auto fin = finalize(st);
  const auto rtn = quantize_fp(w, winner.format);

  const LayerObjective held(layer, w, held_out);
  std::vector<std::size_t> all(held_out.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const std::vector<double> learned(fin.weights.data.begin(), fin.weights.data.end());
  const std::vector<double> nearest(rtn.data.begin(), rtn.data.end());
  const double mse_learned = held.output_mse(learned, all);
  const double mse_rtn = held.output_mse(nearest, all);
  const double reduction = 1.0 - mse_learned / mse_rtn;
  const double polar = polarization(st);
  const double secs = seconds_since(t0);
  return {mse_learned <= mse_rtn && polar >= 0.95 && secs < 120.0,
          fmt("%s b=%.4f, held-out MSE %.4g vs nearest %.4g (%.1f%% reduction, target 20%%: %s), "
              "polarized %.1f%%, %.1f s",
              winner.format.encoding_name().c_str(), winner.format.bias, mse_learned, mse_rtn,
              100.0 * reduction, reduction >= 0.2 ? "met" : "missed", 100.0 * polar, secs)};
}

// 6: zero fraction after quantization.
Outcome sparsity_analog() {
  const auto x = fixtures::gaussian("x", {100000}, 6);
  const double expected = std::erf(0.125 / std::sqrt(2.0));  // 2 Phi(0.125) - 1
  const FpFormat f = make_format(2, 1, 2.0);
  const double got = sparsity(quantize_fp(x, f));
  const auto fp4 = search_tensor(x.values(), SearchSpace::fp4());
  const auto fp8 = search_tensor(x.values(), SearchSpace::fp8());
  const double s4 = sparsity(quantize_fp(x, fp4.format));
  const double s8 = sparsity(quantize_fp(x, fp8.format));
  const double s0 = sparsity(x);
  return {std::fabs(got - expected) <= 0.01 && s4 > s8 && s8 > s0,
          fmt("E2M1 b=2 zero fraction %.4f (expected %.4f), FP4 %.4f > FP8 %.5f > raw %.5f", got,
              expected, s4, s8, s0)};
}

// 7: snapped pipeline is exact.
Outcome pipeline_exactness() {
  const auto m = fixtures::snapped_unet();
  const auto manifest = fixtures::snapped_manifest();
  bool snapped = true;
  for (const auto& [name, t] : m.weights) {
    if (const auto* r = manifest.find(name)) snapped = snapped && quantize_fp(t, r->format) == t;
  }
  const auto acts = capture_activations(m.desc, m.weights, nullptr, nullptr, {m.input}, 1);
  for (const auto& [key, t] : acts.entries()) {
    if (const auto* r = manifest.find(key.tensor)) snapped = snapped && quantize_fp(t, r->format).data == t.data;
  }
  const auto q = run_pipeline(m.desc, m.weights, &manifest, nullptr, m.input, {1, true});
  const auto fp = run_pipeline(m.desc, m.weights, nullptr, nullptr, m.input);
  bool zero = q.layers.size() == 4;
  for (const auto& l : q.layers) zero = zero && l.mse == 0.0;
  const bool same = q.output.data == fp.output.data && q.output.data == q.reference_output.data;
  bool split = false;
  for (const auto& e : q.trace) {
    if (e.layer != "cat") continue;
    const auto want = quantize_fp(*e.saved_skip, manifest.find("cat.skip")->format);
    const auto half = e.output.size() - want.size();
    split = std::equal(want.data.begin(), want.data.end(), e.output.data.begin() + half) &&
            std::equal(e.quantized_incoming->data.begin(), e.quantized_incoming->data.end(),
                       e.output.data.begin());
  }
  return {snapped && zero && same && split,
          fmt("inputs snapped %s, per-layer MSE all zero %s, outputs identical %s, skip split %s",
              snapped ? "yes" : "no", zero ? "yes" : "no", same ? "yes" : "no", split ? "yes" : "no")};
}

// 8: error growth across iterated steps, with and without masks.
Outcome error_accumulation() {
  const auto m = fixtures::toy_unet(8);
  const int steps = 10;
  const auto inputs = fixtures::toy_inputs(m, 4, 80);
  const auto calib = capture_activations(m.desc, m.weights, nullptr, nullptr, inputs, steps);
  AssignOptions opt;
  opt.weight_space = SearchSpace::fp4();
  opt.activation_space = SearchSpace::fp8();
  const auto base = assign_model(m.weights, calib, quantization_targets(m.desc), opt);

  auto masked = base;
  TensorMap masks;
  for (const auto& layer : m.desc.layers) {
    if (layer.type != LayerType::kLinear && layer.type != LayerType::kConv2d) continue;
    auto* rec = masked.find(layer.weight);
    const auto& w = m.weights.at(layer.weight);
    const auto st = train(init_state(w, rec->format), w, calib, layer, LearnConfig{});
    auto fin = finalize(st);
    fin.mask.name = layer.weight + ".mask";
    rec->rounding_mask_ref = fin.mask.name;
    masks[fin.mask.name] = fin.mask;
  }
  const auto plain = run_pipeline(m.desc, m.weights, &base, nullptr, m.input, {steps, false});
  const auto with = run_pipeline(m.desc, m.weights, &masked, &masks, m.input, {steps, false});
  bool monotone = true;
  std::string curve;
  for (int s = 0; s < steps; ++s) {
    if (s > 0) monotone = monotone && plain.step_output_mse[s] >= plain.step_output_mse[s - 1];
    curve += fmt(s ? " %.3g" : "%.3g", plain.step_output_mse[s]);
  }
  const double a = plain.step_output_mse.back(), b = with.step_output_mse.back();
  return {monotone && b <= a,
          fmt("per-step MSE [%s] %s; final MSE with masks %.4g vs without %.4g", curve.c_str(),
              monotone ? "non-decreasing" : "DECREASES", b, a)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 9: serialization round trips and CLI determinism.
Outcome roundtrips_and_determinism() {
  const auto model = fixtures::toy_unet(9);
  std::vector<Tensor> tensors;
  for (const auto& [n, t] : model.weights) tensors.push_back(t);
  tensors.push_back(Tensor("special", {5}, {0.0f, -0.0f, std::numeric_limits<float>::denorm_min(),
                                            -std::numeric_limits<float>::max(), 1.0f / 3.0f}));
  const auto bytes = encode_container(tensors);
  const auto back = decode_container(bytes);
  bool container = encode_container(back) == bytes && back.size() == tensors.size();
  for (std::size_t i = 0; container && i < back.size(); ++i) {
    container = std::memcmp(back[i].data.data(), tensors[i].data.data(), tensors[i].size() * 4) == 0 &&
                back[i].shape == tensors[i].shape && back[i].name == tensors[i].name;
  }
  const auto calib = capture_activations(model.desc, model.weights, nullptr, nullptr,
                                         fixtures::toy_inputs(model, 2, 1), 3);
  const auto cs_back = CalibSet::from_tensors(decode_container(encode_container(calib.to_tensors())));
  container = container && cs_back.entries() == calib.entries();

  AssignOptions opt;
  opt.weight_space = SearchSpace::fp4();
  const auto manifest = assign_model(model.weights, calib, quantization_targets(model.desc), opt);
  const auto text = manifest_to_json(manifest);
  const auto mback = manifest_from_json(text);
  const bool manifest_ok = mback == manifest && manifest_to_json(mback) == text;

  // Every subcommand twice, comparing all produced bytes.
  const fs::path root = fs::temp_directory_path() / "fpq_acceptance_cli";
  fs::remove_all(root);
  fixtures::write_model(model, root / "data");
  write_container(root / "data" / "calib.fpqt", calib.to_tensors());
  std::vector<std::string> produced;
  bool ran = true;
  for (const char* run : {"a", "b"}) {
    const fs::path out = root / run;
    fs::create_directories(out);
    const std::string d = (root / "data").string() + "/", o = out.string() + "/";
    const std::string cli = FPQ_CLI_PATH;
    const std::vector<std::pair<std::string, std::string>> cmds = {
        {"inspect", "inspect " + d + "model.fpqt"},
        {"quantize", "quantize " + d + "model.fpqt --format E2M1 --bias 1.5 -o " + o + "q.fpqt"},
        {"search", "search --model " + d + "model.fpqt --acts " + d + "calib.fpqt --pipeline " + d +
                       "model.pipeline.json --bitwidth 4 --seed 3 -o " + o + "m.json"},
        {"learn", "learn-rounding --model " + d + "model.fpqt --manifest " + o + "m.json --calib " + d +
                      "calib.fpqt --pipeline " + d + "model.pipeline.json --iters 50 --seed 3 -o " + o +
                      "ml.json --masks-out " + o + "masks.fpqt"},
        {"simulate", "simulate --pipeline " + d + "model.pipeline.json --model " + d +
                         "model.fpqt --manifest " + o + "ml.json --input " + d +
                         "input.fpqt --steps 3 --csv " + o + "sim.csv -o " + o + "out.fpqt"},
        {"report", "report --model " + d + "model.fpqt --manifest " + o + "ml.json --csv " + o +
                       "report.csv"},
    };
    for (const auto& [name, args] : cmds) {
      const std::string cmd = cli + " " + args + " > " + o + name + ".stdout 2>&1";
      ran = ran && std::system(cmd.c_str()) == 0;
    }
    if (produced.empty()) {
      for (const auto& entry : fs::directory_iterator(out)) produced.push_back(entry.path().filename());
      std::sort(produced.begin(), produced.end());
    }
  }
  // Logs echo their own output directory; mask it before comparing.
  auto normalized = [&](const char* run, const std::string& f) {
    auto text = slurp(root / run / f);
    const std::string dir = (root / run).string();
    for (auto pos = text.find(dir); pos != std::string::npos; pos = text.find(dir, pos)) {
      text.replace(pos, dir.size(), "<out>");
    }
    return text;
  };
  int identical = 0;
  for (const auto& f : produced) {
    identical += fs::exists(root / "b" / f) && normalized("a", f) == normalized("b", f);
  }
  int missing = 0;
  for (const char* f : {"q.fpqt", "m.json", "ml.json", "masks.fpqt", "sim.csv", "out.fpqt", "report.csv"}) {
    missing += !std::binary_search(produced.begin(), produced.end(), std::string(f));
  }
  const bool determinism = ran && missing == 0 && identical == static_cast<int>(produced.size());
  return {container && manifest_ok && determinism,
          fmt("container %s, manifest %s, CLI runs %s, %d expected outputs missing, %d/%zu output files byte-identical",
              container ? "bit-exact" : "DIFFERS", manifest_ok ? "exact" : "DIFFERS",
              ran ? "succeeded" : "FAILED", missing, identical, produced.size())};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"code-oracle equivalence", code_oracle},
      {"format sanity", format_sanity},
      {"search-oracle equivalence", search_oracle},
      {"gradient check", gradient_check},
      {"rounding-learning efficacy", rounding_efficacy},
      {"sparsity analog", sparsity_analog},
      {"pipeline exactness", pipeline_exactness},
      {"error accumulation", error_accumulation},
      {"round trips and CLI determinism", roundtrips_and_determinism},
  };
  int failed = 0;
  int index = 1;
  for (const auto& [name, fn] : criteria) {
    Outcome r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] criterion %d %s: %s\n", r.pass ? "PASS" : "FAIL", index, name, r.detail.c_str());
    std::fflush(stdout);
    failed += !r.pass;
    ++index;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}

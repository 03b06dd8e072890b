#include "fixtures.hpp"

#include <random>

#include "fpq/tensorstore.hpp"

namespace fpq::fixtures {

Tensor gaussian(const std::string& name, const Shape& shape, std::uint64_t seed,
                double stddev, double mean) {
  Tensor t(name, shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(mean, stddev);
  for (float& v : t.data) v = static_cast<float>(dist(rng));
  return t;
}

namespace {

Tensor integers(const std::string& name, const Shape& shape, std::mt19937_64& rng, int lo,
                int hi, int step) {
  Tensor t(name, shape);
  std::uniform_int_distribution<int> dist(lo, hi);
  for (float& v : t.data) v = static_cast<float>(step * dist(rng));
  return t;
}

constexpr const char* kUnetJson = R"({
  "layers": [
    {"type": "conv2d", "name": "conv1", "w": "conv1.w", "bias": "conv1.b", "padding": 1},
    {"type": "silu", "name": "act1"},
    {"type": "skip_save", "name": "save", "slot": "s0"},
    {"type": "conv2d", "name": "conv2", "w": "conv2.w", "padding": 1},
    {"type": "skip_concat", "name": "cat", "slot": "s0", "axis": 1},
    {"type": "linear", "name": "head", "w": "head.w"}
  ]
})";

constexpr const char* kToyJson = R"({
  "layers": [
    {"type": "groupnorm", "name": "norm0", "groups": 2, "gamma": "norm0.g", "beta": "norm0.b"},
    {"type": "silu", "name": "act0"},
    {"type": "conv2d", "name": "conv1", "w": "conv1.w", "bias": "conv1.b", "padding": 1},
    {"type": "silu", "name": "act1"},
    {"type": "skip_save", "name": "save", "slot": "s0"},
    {"type": "conv2d", "name": "conv2", "w": "conv2.w", "bias": "conv2.b", "padding": 1},
    {"type": "skip_concat", "name": "cat", "slot": "s0", "axis": 1},
    {"type": "linear", "name": "head", "w": "head.w", "bias": "head.b"}
  ]
})";

}  // namespace

Model snapped_unet() {
  std::mt19937_64 rng(7);
  Model m;
  m.desc = pipeline_from_json(kUnetJson);
  std::vector<Tensor> w;
  w.push_back(integers("conv1.w", {2, 2, 3, 3}, rng, -1, 1, 1));
  // 64 keeps every silu input at or above 28, where silu(x) rounds to x.
  w.push_back(Tensor("conv1.b", {2}, {64.0f, 64.0f}));
  Tensor c2("conv2.w", {2, 2, 3, 3});
  c2.data[(0 * 2 + 0) * 9 + 4] = 1.0f;
  c2.data[(0 * 2 + 1) * 9 + 4] = -1.0f;
  c2.data[(1 * 2 + 1) * 9 + 4] = 1.0f;
  c2.data[(1 * 2 + 0) * 9 + 4] = -1.0f;
  w.push_back(c2);
  w.push_back(integers("head.w", {4, 4}, rng, -1, 1, 1));
  m.weights = to_map(std::move(w));
  m.input = integers("input", {1, 2, 4, 4}, rng, -1, 1, 2);
  return m;
}

QuantManifest snapped_manifest() {
  QuantManifest manifest;
  const FpFormat wfmt = make_format(4, 3, 8.0);
  const FpFormat afmt = make_format(2, 5, -5.0);
  for (const char* name : {"conv1.w", "conv2.w", "head.w"}) {
    manifest.records.push_back({name, TensorKind::kWeight, QuantMode::kFp, wfmt, 0, {}});
  }
  for (const char* name : {"conv1.in", "conv2.in", "cat.in", "cat.skip"}) {
    manifest.records.push_back({name, TensorKind::kActivation, QuantMode::kFp, afmt, 0, {}});
  }
  return manifest;
}

Model toy_unet(std::uint64_t seed) {
  Model m;
  m.desc = pipeline_from_json(kToyJson);
  std::vector<Tensor> w;
  w.push_back(gaussian("norm0.g", {8}, seed + 1, 0.1, 1.0));
  w.push_back(gaussian("norm0.b", {8}, seed + 2, 0.1));
  w.push_back(gaussian("conv1.w", {4, 8, 3, 3}, seed + 3, 0.118));
  w.push_back(gaussian("conv1.b", {4}, seed + 4, 0.1));
  w.push_back(gaussian("conv2.w", {4, 4, 3, 3}, seed + 5, 1.0 / 6.0));
  w.push_back(gaussian("conv2.b", {4}, seed + 6, 0.1));
  w.push_back(gaussian("head.w", {8, 8}, seed + 7, 1.0 / 2.8));
  w.push_back(gaussian("head.b", {8}, seed + 8, 0.1));
  m.weights = to_map(std::move(w));
  m.input = gaussian("input", {1, 8, 8, 8}, seed + 9);
  return m;
}

std::vector<Tensor> toy_inputs(const Model& model, int count, std::uint64_t seed) {
  std::vector<Tensor> out;
  for (int i = 0; i < count; ++i) {
    out.push_back(gaussian("input", model.input.shape, seed + 1000 + i));
  }
  return out;
}

void write_model(const Model& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_atomic(dir / "model.pipeline.json", pipeline_to_json(model.desc));
  std::vector<Tensor> w;
  for (const auto& [name, t] : model.weights) w.push_back(t);
  write_container(dir / "model.fpqt", w);
  write_container(dir / "input.fpqt", {model.input});
}

}  // namespace fpq::fixtures

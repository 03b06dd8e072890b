#pragma once

// Synthetic models shared by the unit tests, the acceptance binary and the
// CLI tests.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fpq/manifest.hpp"
#include "fpq/netsim.hpp"
#include "fpq/tensor.hpp"

namespace fpq::fixtures {

Tensor gaussian(const std::string& name, const Shape& shape, std::uint64_t seed,
                double stddev = 1.0, double mean = 0.0);

struct Model {
  PipelineDesc desc;
  TensorMap weights;
  Tensor input;
};

/// conv -> silu -> skip_save -> conv -> skip_concat -> linear with small
/// integer weights and even-integer inputs. Every tensor is a code of
/// snapped_manifest()'s formats and every intermediate stays exact in
/// 32-bit arithmetic.
Model snapped_unet();
QuantManifest snapped_manifest();

/// Random-weight variant that normalizes its input first. The output
/// has the input's shape so it can be iterated.
Model toy_unet(std::uint64_t seed);

/// Several inputs shaped like model.input.
std::vector<Tensor> toy_inputs(const Model& model, int count, std::uint64_t seed);

/// Writes model.pipeline.json, model.fpqt and input.fpqt into dir.
void write_model(const Model& model, const std::filesystem::path& dir);

}  // namespace fpq::fixtures

#include "fpq/formatsearch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fpq/error.hpp"
#include "fpq/kernels.hpp"

namespace fpq {

SearchSpace SearchSpace::fp8(int n_bias) { return {{{2, 5}, {3, 4}, {4, 3}, {5, 2}}, n_bias}; }

SearchSpace SearchSpace::fp4(int n_bias) { return {{{1, 2}, {2, 1}}, n_bias}; }

SearchSpace SearchSpace::for_bitwidth(int bits, int n_bias) {
  if (bits == 8) return fp8(n_bias);
  if (bits == 4) return fp4(n_bias);
  throw UsageError("bitwidth must be 4 or 8, got " + std::to_string(bits));
}

BiasGrid bias_candidates(std::span<const float> data, int e_bits, int m_bits, int n) {
  if (n < 1) throw ValidationError("bias candidate count must be at least 1");
  double amax = 0.0;
  for (float v : data) amax = std::max(amax, std::fabs(static_cast<double>(v)));
  BiasGrid grid;
  if (amax == 0.0) {
    grid.degenerate = true;
    grid.biases.push_back(default_bias(e_bits));
    return grid;
  }
  grid.biases.reserve(n);
  for (int k = 1; k <= n; ++k) {
    grid.biases.push_back(bias_from_cmax(e_bits, m_bits, k * amax / n));
  }
  return grid;
}

SearchResult search_tensor(std::span<const float> data, const SearchSpace& space) {
  if (data.empty()) throw ValidationError("cannot search an empty tensor");
  if (space.encodings.empty() || space.n_bias < 1) {
    throw ValidationError("empty search space");
  }
  for (float v : data) {
    if (!std::isfinite(v)) throw ValidationError("search data contains non-finite values");
  }
  const auto& ops = kernels::active();
  std::vector<float> scratch(data.size());
  SearchResult best;
  best.mse = std::numeric_limits<double>::infinity();
  int index = 0;
  for (const auto& [e, m] : space.encodings) {
    const auto grid = bias_candidates(data, e, m, space.n_bias);
    best.degenerate = grid.degenerate;
    for (double bias : grid.biases) {
      const auto fmt = make_format(e, m, bias);
      ops.quantize_fp(data.data(), scratch.data(), data.size(), make_grid(fmt));
      const double err = ops.sq_err(scratch.data(), data.data(), data.size()) /
                         static_cast<double>(data.size());
      if (err < best.mse) {
        best.mse = err;
        best.format = fmt;
        best.candidate_index = index;
      }
      ++index;
    }
  }
  best.evaluated = index;
  return best;
}

QuantManifest assign_model(const TensorMap& weights, const CalibSet& init_acts,
                           const std::vector<QuantTarget>& order,
                           const AssignOptions& options) {
  QuantManifest manifest;
  for (const auto& target : order) {
    QuantRecord record;
    record.name = target.name;
    record.kind = target.kind;

    std::vector<float> data;
    if (target.kind == TensorKind::kWeight) {
      auto it = weights.find(target.name);
      if (it == weights.end()) {
        throw ValidationError("weight '" + target.name + "' is not in the model");
      }
      data = it->second.data;
    } else if (target.quantizable && !options.int_mode) {
      if (options.activation_source) {
        data = options.activation_source(target.name, manifest);
      } else {
        if (!init_acts.contains_tensor(target.name)) {
          throw ValidationError("no initialization samples for activation '" + target.name + "'");
        }
        data = pool_samples(init_acts.samples(target.name));
      }
    }

    if (!target.quantizable) {
      record.mode = QuantMode::kPassthrough;
    } else if (options.int_mode) {
      record.mode = QuantMode::kInt;
      record.bits = options.int_bits;
    } else {
      const auto& space = target.kind == TensorKind::kWeight ? options.weight_space
                                                              : options.activation_space;
      const auto result = search_tensor(data, space);
      record.mode = QuantMode::kFp;
      record.format = result.format;
      if (options.on_result) options.on_result(target, result);
    }
    if (manifest.find(record.name)) {
      throw ValidationError("tensor '" + record.name + "' appears twice in the search order");
    }
    manifest.records.push_back(std::move(record));
  }
  return manifest;
}

}  // namespace fpq

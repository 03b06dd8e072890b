#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fpq/fpcodec.hpp"
#include "fpq/manifest.hpp"
#include "fpq/netsim.hpp"
#include "fpq/tensorstore.hpp"

namespace fpq {

inline constexpr int kDefaultBiasCandidates = 111;

/// Candidate encodings (searched in listed order) and bias grid size.
struct SearchSpace {
  std::vector<std::pair<int, int>> encodings;
  int n_bias = kDefaultBiasCandidates;

  /// E2M5, E3M4, E4M3, E5M2.
  static SearchSpace fp8(int n_bias = kDefaultBiasCandidates);
  /// E1M2, E2M1.
  static SearchSpace fp4(int n_bias = kDefaultBiasCandidates);
  static SearchSpace for_bitwidth(int bits, int n_bias = kDefaultBiasCandidates);

  std::size_t size() const noexcept { return encodings.size() * static_cast<std::size_t>(n_bias); }
};

struct BiasGrid {
  std::vector<double> biases;
  bool degenerate = false;  // all-zero data; a single default-bias candidate
};

/// Biases whose clipping maxima are k * A / n for k = 1..n, A = max |data|.
BiasGrid bias_candidates(std::span<const float> data, int e_bits, int m_bits, int n);

struct SearchResult {
  FpFormat format;
  double mse = 0.0;
  int candidate_index = -1;  // encoding-major, bias-minor enumeration position
  int evaluated = 0;
  bool degenerate = false;
};

/// Exhaustive (encoding, bias) grid search minimizing quantization MSE.
/// Ties keep the earliest candidate.
SearchResult search_tensor(std::span<const float> data, const SearchSpace& space);

/// Supplies the activation samples searched for a record. The partial
/// manifest holds every decision fixed so far.
using ActivationSource =
    std::function<std::vector<float>(const std::string& act, const QuantManifest& partial)>;

struct AssignOptions {
  SearchSpace weight_space = SearchSpace::fp8();
  SearchSpace activation_space = SearchSpace::fp8();
  /// Integer baseline: every quantizable record becomes int mode, no search.
  bool int_mode = false;
  int int_bits = 8;
  /// Overrides the pooled initialization samples (e.g. re-captured through
  /// the partially quantized pipeline).
  ActivationSource activation_source;
  /// Called after each searched tensor.
  std::function<void(const QuantTarget&, const SearchResult&)> on_result;
};

/// Greedy layer-by-layer assignment: each target is searched in order and
/// fixed before moving on.
QuantManifest assign_model(const TensorMap& weights, const CalibSet& init_acts,
                           const std::vector<QuantTarget>& order,
                           const AssignOptions& options);

}  // namespace fpq

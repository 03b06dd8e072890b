#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fpq/fpcodec.hpp"
#include "fpq/netsim.hpp"
#include "fpq/tensor.hpp"
#include "fpq/tensorstore.hpp"

namespace fpq {

enum class Optimizer { kAdam, kSgd };

struct LearnConfig {
  int iterations = 1000;
  double step_size = 0.3;
  int batch_size = 16;  // 16 unconditional, 8 text-to-image
  double reg_weight = 1.0;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kAdam;

  void validate() const;
};

/// Learnable rounding directions for one weight tensor. Cell scales and
/// lower edges are frozen from the clipped full-precision weights, so each
/// alpha only chooses between two fixed neighbouring codes.
struct RoundingState {
  Shape shape;
  FpFormat format;
  double cmax = 0.0;
  std::vector<double> alpha;
  std::vector<double> scale;
  std::vector<double> floor_index;
  std::vector<std::uint8_t> clipped;   // |W| > c; soft value pinned to +-c
  std::vector<double> clipped_value;   // sign(W) * c

  std::size_t size() const noexcept { return alpha.size(); }

  Tensor alpha_tensor() const;
  Tensor scale_tensor() const;
  Tensor floor_tensor() const;
  Tensor clip_mask_tensor() const;
};

double sigmoid(double x);

/// alpha = logit(clamp(frac(w'/s), 1e-4, 1 - 1e-4)).
RoundingState init_state(const Tensor& w, const FpFormat& fmt);

/// clamp(s * (floor + sigmoid(alpha)), -c, c) per element.
std::vector<double> soft_values(const RoundingState& state);
Tensor soft_quantize(const RoundingState& state);

/// reg_weight * sum_i (1 - |2 sigmoid(alpha_i) - 1|^20).
double reg_term(std::span<const double> alpha, double reg_weight);

struct LossGrad {
  double loss = 0.0;
  double data_term = 0.0;
  double reg = 0.0;
  std::vector<double> grad;  // d loss / d alpha
};

/// Layer-output reconstruction objective for one layer. Holds the batch
/// samples unfolded into 64-bit design matrices so repeated evaluations
/// only pay for the GEMMs.
class LayerObjective {
 public:
  LayerObjective(const LayerDesc& layer, const Tensor& w, const std::vector<Tensor>& samples);

  std::size_t sample_count() const noexcept { return designs_.size(); }

  /// mean over the chosen samples of mse(layer(Wq), layer(W)) plus the
  /// regularizer over unclipped elements, with its exact gradient.
  LossGrad evaluate(const RoundingState& state, std::span<const std::size_t> batch,
                    double reg_weight) const;
  LossGrad evaluate_all(const RoundingState& state, double reg_weight) const;

  /// Mean squared layer-output error of an arbitrary replacement weight.
  double output_mse(const std::vector<double>& replacement,
                    std::span<const std::size_t> batch) const;

 private:
  std::vector<double> weight_;          // flattened (out, patch)
  std::int64_t out_ = 0;
  std::int64_t patch_ = 0;
  std::vector<std::vector<double>> designs_;  // per sample: (rows, patch)
  std::vector<std::int64_t> rows_;
};

LossGrad loss_and_grad(const RoundingState& state, const Tensor& w,
                       const std::vector<Tensor>& batch, const LayerDesc& layer,
                       const LearnConfig& cfg);

struct TrainTrace {
  std::vector<double> objective;       // per-iteration minibatch objective
  std::vector<double> best_objective;  // running minimum
  double initial_full = 0.0;           // objective over all samples before training
  double final_full = 0.0;             // and after
};

/// Minibatch descent on alpha over the layer's calibration samples
/// (calib entries named by layer.act).
RoundingState train(RoundingState state, const Tensor& w, const CalibSet& calib,
                    const LayerDesc& layer, const LearnConfig& cfg,
                    TrainTrace* trace = nullptr);

struct FinalizedWeights {
  Tensor weights;
  Tensor mask;  // 0 round down, 1 round up
};

/// Hard rounding: sigmoid(alpha) >= 0.5 rounds up.
FinalizedWeights finalize(const RoundingState& state);

/// Fraction of elements with |sigmoid(alpha) - 0.5| > margin.
double polarization(const RoundingState& state, double margin = 0.49);

}  // namespace fpq

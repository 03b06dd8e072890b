#include "fpq/adaround.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "fpq/error.hpp"
#include "fpq/kernels.hpp"

namespace fpq {
namespace {

constexpr double kFracFloor = 1e-4;
constexpr int kRegExponent = 20;

Tensor to_tensor(const Shape& shape, const std::vector<double>& values, const std::string& name) {
  Tensor t(name, shape);
  for (std::size_t i = 0; i < values.size(); ++i) t.data[i] = static_cast<float>(values[i]);
  return t;
}

}  // namespace

void LearnConfig::validate() const {
  if (iterations < 1) throw ValidationError("iterations must be at least 1");
  if (!(step_size > 0.0)) throw ValidationError("step size must be positive");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (!(reg_weight >= 0.0)) throw ValidationError("regularizer weight must be non-negative");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor RoundingState::alpha_tensor() const { return to_tensor(shape, alpha, "alpha"); }
Tensor RoundingState::scale_tensor() const { return to_tensor(shape, scale, "scale"); }
Tensor RoundingState::floor_tensor() const { return to_tensor(shape, floor_index, "floor"); }

Tensor RoundingState::clip_mask_tensor() const {
  Tensor t("clip_mask", shape);
  for (std::size_t i = 0; i < clipped.size(); ++i) t.data[i] = clipped[i] ? 1.0f : 0.0f;
  return t;
}

RoundingState init_state(const Tensor& w, const FpFormat& fmt) {
  check_finite(w);
  const auto grid = make_grid(fmt);
  RoundingState st;
  st.shape = w.shape;
  st.format = fmt;
  st.cmax = grid.cmax;
  const std::size_t n = w.size();
  st.alpha.resize(n);
  st.scale.resize(n);
  st.floor_index.resize(n);
  st.clipped.resize(n);
  st.clipped_value.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cell = grid_cell(w.data[i], grid);
    st.scale[i] = cell.scale;
    st.floor_index[i] = cell.floor_index;
    st.clipped[i] = cell.saturated ? 1 : 0;
    st.clipped_value[i] = std::copysign(grid.cmax, static_cast<double>(w.data[i]));
    const double frac = std::clamp(cell.clipped / cell.scale - cell.floor_index, kFracFloor,
                                   1.0 - kFracFloor);
    st.alpha[i] = std::log(frac / (1.0 - frac));
  }
  return st;
}

std::vector<double> soft_values(const RoundingState& st) {
  std::vector<double> out(st.size());
  for (std::size_t i = 0; i < st.size(); ++i) {
    out[i] = st.clipped[i] ? st.clipped_value[i]
                           : std::clamp(st.scale[i] * (st.floor_index[i] + sigmoid(st.alpha[i])),
                                        -st.cmax, st.cmax);
  }
  return out;
}

Tensor soft_quantize(const RoundingState& st) { return to_tensor(st.shape, soft_values(st), "soft"); }

double reg_term(std::span<const double> alpha, double reg_weight) {
  double sum = 0.0;
  for (double a : alpha) sum += 1.0 - std::pow(std::fabs(2.0 * sigmoid(a) - 1.0), kRegExponent);
  return reg_weight * sum;
}

LayerObjective::LayerObjective(const LayerDesc& layer, const Tensor& w,
                               const std::vector<Tensor>& samples) {
  if (samples.empty()) throw ValidationError("rounding objective needs at least one sample");
  weight_.assign(w.data.begin(), w.data.end());
  if (layer.type == LayerType::kLinear) {
    if (w.rank() != 2) throw ValidationError("linear weight must be rank 2");
    out_ = w.dim(0);
    patch_ = w.dim(1);
    for (const auto& s : samples) {
      if (s.rank() < 1 || s.shape.back() != patch_) {
        throw ValidationError("sample shape " + shape_to_string(s.shape) +
                              " does not fit linear weight " + shape_to_string(w.shape));
      }
      designs_.emplace_back(s.data.begin(), s.data.end());
      rows_.push_back(static_cast<std::int64_t>(s.size()) / patch_);
    }
  } else if (layer.type == LayerType::kConv2d) {
    out_ = w.dim(0);
    for (const auto& s : samples) {
      const auto g = conv_geometry(w.shape, s.shape, layer.stride, layer.padding);
      patch_ = g.patch();
      std::vector<double> design(static_cast<std::size_t>(g.batch * g.positions() * patch_));
      for (std::int64_t b = 0; b < g.batch; ++b) {
        im2col(s.data.data(), g, b, design.data() + b * g.positions() * patch_);
      }
      designs_.push_back(std::move(design));
      rows_.push_back(g.batch * g.positions());
    }
  } else {
    throw ValidationError("rounding learning applies to linear and conv2d layers only");
  }
}

LossGrad LayerObjective::evaluate(const RoundingState& st, std::span<const std::size_t> batch,
                                  double reg_weight) const {
  if (batch.empty()) throw ValidationError("empty batch");
  if (st.size() != weight_.size()) throw ValidationError("rounding state does not match weight");
  const auto& ops = kernels::active();
  const auto soft = soft_values(st);

  // Output error is linear in (Wq - W); the layer bias cancels.
  std::vector<double> diff_t(static_cast<std::size_t>(patch_ * out_));
  for (std::int64_t o = 0; o < out_; ++o) {
    for (std::int64_t k = 0; k < patch_; ++k) {
      const auto i = o * patch_ + k;
      diff_t[k * out_ + o] = soft[i] - weight_[i];
    }
  }

  std::vector<double> grad_w(weight_.size(), 0.0);
  std::vector<double> err, err_t, part(weight_.size());
  double sum_sq = 0.0;
  double count = 0.0;
  for (auto idx : batch) {
    const auto rows = rows_.at(idx);
    const auto& x = designs_[idx];
    err.resize(static_cast<std::size_t>(rows * out_));
    ops.gemm_f64(x.data(), diff_t.data(), err.data(), rows, patch_, out_);
    err_t.resize(err.size());
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t o = 0; o < out_; ++o) {
        const double e = err[r * out_ + o];
        sum_sq += e * e;
        err_t[o * rows + r] = e;
      }
    }
    ops.gemm_f64(err_t.data(), x.data(), part.data(), out_, rows, patch_);
    for (std::size_t i = 0; i < part.size(); ++i) grad_w[i] += part[i];
    count += static_cast<double>(rows * out_);
  }

  LossGrad out;
  out.data_term = sum_sq / count;
  out.grad.assign(st.size(), 0.0);
  double reg = 0.0;
  for (std::size_t i = 0; i < st.size(); ++i) {
    if (st.clipped[i]) continue;
    const double sg = sigmoid(st.alpha[i]);
    const double dsg = sg * (1.0 - sg);
    const double raw = st.scale[i] * (st.floor_index[i] + sg);
    if (raw >= -st.cmax && raw <= st.cmax) {
      out.grad[i] = 2.0 / count * grad_w[i] * st.scale[i] * dsg;
    }
    const double u = std::fabs(2.0 * sg - 1.0);
    reg += 1.0 - std::pow(u, kRegExponent);
    const double sign = sg > 0.5 ? 1.0 : (sg < 0.5 ? -1.0 : 0.0);
    out.grad[i] -= reg_weight * kRegExponent * std::pow(u, kRegExponent - 1) * 2.0 * sign * dsg;
  }
  out.reg = reg_weight * reg;
  out.loss = out.data_term + out.reg;
  return out;
}

LossGrad LayerObjective::evaluate_all(const RoundingState& st, double reg_weight) const {
  std::vector<std::size_t> all(designs_.size());
  std::iota(all.begin(), all.end(), 0);
  return evaluate(st, all, reg_weight);
}

double LayerObjective::output_mse(const std::vector<double>& replacement,
                                  std::span<const std::size_t> batch) const {
  if (replacement.size() != weight_.size()) throw ValidationError("replacement weight size mismatch");
  if (batch.empty()) throw ValidationError("empty batch");
  const auto& ops = kernels::active();
  std::vector<double> diff_t(static_cast<std::size_t>(patch_ * out_));
  for (std::int64_t o = 0; o < out_; ++o) {
    for (std::int64_t k = 0; k < patch_; ++k) {
      diff_t[k * out_ + o] = replacement[o * patch_ + k] - weight_[o * patch_ + k];
    }
  }
  double sum_sq = 0.0;
  double count = 0.0;
  std::vector<double> err;
  for (auto idx : batch) {
    const auto rows = rows_.at(idx);
    err.resize(static_cast<std::size_t>(rows * out_));
    ops.gemm_f64(designs_[idx].data(), diff_t.data(), err.data(), rows, patch_, out_);
    for (double e : err) sum_sq += e * e;
    count += static_cast<double>(err.size());
  }
  return sum_sq / count;
}

LossGrad loss_and_grad(const RoundingState& state, const Tensor& w,
                       const std::vector<Tensor>& batch, const LayerDesc& layer,
                       const LearnConfig& cfg) {
  if (batch.empty()) throw ValidationError("empty batch");
  require_same_shape(w, Tensor("", state.shape), "rounding state");
  return LayerObjective(layer, w, batch).evaluate_all(state, cfg.reg_weight);
}

RoundingState train(RoundingState state, const Tensor& w, const CalibSet& calib,
                    const LayerDesc& layer, const LearnConfig& cfg, TrainTrace* trace) {
  cfg.validate();
  const auto refs = calib.samples(layer.act);
  if (refs.empty()) {
    throw ValidationError("no calibration samples for '" + layer.act + "'");
  }
  std::vector<Tensor> samples;
  samples.reserve(refs.size());
  for (const auto* t : refs) samples.push_back(*t);
  const LayerObjective objective(layer, w, samples);

  const std::size_t n = objective.sample_count();
  const std::size_t batch = std::min<std::size_t>(cfg.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);

  std::vector<double> m1(state.size(), 0.0), m2(state.size(), 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double beta1_t = 1.0, beta2_t = 1.0;

  if (trace) trace->initial_full = objective.evaluate_all(state, cfg.reg_weight).loss;
  double best = std::numeric_limits<double>::infinity();
  for (int it = 0; it < cfg.iterations; ++it) {
    // Partial Fisher-Yates: the first `batch` slots are a uniform draw
    // without replacement.
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
      std::swap(order[i], order[j]);
    }
    const auto lg = objective.evaluate(state, std::span(order.data(), batch), cfg.reg_weight);
    if (trace) {
      best = std::min(best, lg.loss);
      trace->objective.push_back(lg.loss);
      trace->best_objective.push_back(best);
    }
    if (cfg.optimizer == Optimizer::kSgd) {
      for (std::size_t i = 0; i < state.size(); ++i) state.alpha[i] -= cfg.step_size * lg.grad[i];
    } else {
      beta1_t *= kBeta1;
      beta2_t *= kBeta2;
      for (std::size_t i = 0; i < state.size(); ++i) {
        const double g = lg.grad[i];
        m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * g;
        m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * g * g;
        const double mhat = m1[i] / (1.0 - beta1_t);
        const double vhat = m2[i] / (1.0 - beta2_t);
        state.alpha[i] -= cfg.step_size * mhat / (std::sqrt(vhat) + kEps);
      }
    }
  }
  if (trace) trace->final_full = objective.evaluate_all(state, cfg.reg_weight).loss;
  return state;
}

FinalizedWeights finalize(const RoundingState& st) {
  FinalizedWeights out{Tensor("", st.shape), Tensor("", st.shape)};
  for (std::size_t i = 0; i < st.size(); ++i) {
    const bool up = sigmoid(st.alpha[i]) >= 0.5;
    out.mask.data[i] = up ? 1.0f : 0.0f;
    out.weights.data[i] = static_cast<float>(
        st.clipped[i] ? st.clipped_value[i]
                      : std::clamp(st.scale[i] * (st.floor_index[i] + (up ? 1.0 : 0.0)),
                                   -st.cmax, st.cmax));
  }
  return out;
}

double polarization(const RoundingState& st, double margin) {
  if (st.size() == 0) return 0.0;
  std::size_t decided = 0;
  for (double a : st.alpha) decided += std::fabs(sigmoid(a) - 0.5) > margin;
  return static_cast<double>(decided) / static_cast<double>(st.size());
}

}  // namespace fpq

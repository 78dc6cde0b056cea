#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hvt/model.hpp"
#include "hvt/params.hpp"

namespace hvt {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

/// Moments mirror the parameter set index-for-index. Each parameter keeps its own
/// step count so that bias correction starts fresh when a frozen tensor is released.
struct AdamWState {
    AdamWOptions options;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::vector<std::uint64_t> param_steps;
    std::uint64_t step = 0;
};

AdamWState adamw_init(const ParamSet& params, const AdamWOptions& options);

/// Per-parameter trainability; frozen tensors are never touched by the optimizer.
struct FreezeMask {
    std::vector<bool> frozen;

    bool is_frozen(std::size_t i) const { return i < frozen.size() && frozen[i]; }
};

FreezeMask freeze_none(const ParamSet& params);
/// Freezes everything except the classification head.
FreezeMask freeze_backbone(const ParamSet& params);

/// One decoupled-weight-decay Adam step:
///   theta -= lr * wd * theta;  theta -= lr * m_hat / (sqrt(v_hat) + eps)
/// `lr_factors` (optional) scales lr per parameter. Throws NumericError on non-finite gradients.
void adamw_step(ParamSet& params, const GradSet& grads, AdamWState& state, double lr,
                std::span<const double> lr_factors = {}, const FreezeMask* mask = nullptr);

double global_grad_norm(const GradSet& grads);
/// Rescales all gradients by max_norm / norm when the global L2 norm exceeds max_norm.
/// Returns the norm measured before clipping.
double clip_grad_norm(GradSet& grads, double max_norm);

/// Linear warmup to base_lr over [0, t_warmup), then half-cosine decay to 0 at t = total.
double warmup_cosine_lr(double t, double t_warmup, double total, double base_lr);
/// Piecewise-linear one-cycle: lr_min -> lr_max over [0, t_warmup), then back down to lr_min at total.
double onecycle_lr(double t, double t_warmup, double total, double lr_max, double lr_min);

/// Layer-wise learning-rate multiplier for one parameter name.
///
/// Blocks are counted from the output: the head gets 1, the last block decay^1,
/// the block below decay^2, and so on. A patch merge takes the factor of the first
/// block of the stage it feeds; the patch and positional embeddings take the deepest
/// block's factor. Names outside the backbone (e.g. projection heads) get 1.
double layerwise_lr_factor(std::string_view name, const HVTConfig& config, double decay);
std::vector<double> layerwise_lr_factors(const ParamSet& params, const HVTConfig& config, double decay = 0.65);

struct EmaState {
    ParamSet shadow;
    double beta = 0.9999;
};

/// Shadow initialized to a copy of the current weights.
EmaState ema_init(const ParamSet& params, double beta = 0.9999);
/// shadow = beta * shadow + (1 - beta) * params
void ema_update(EmaState& ema, const ParamSet& params);
/// Exchanges shadow and live values; calling it twice restores the original state bit-exactly.
void ema_swap(EmaState& ema, ParamSet& params);

} // namespace hvt

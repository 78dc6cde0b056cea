#include "hvt/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace hvt {

AdamWState adamw_init(const ParamSet& params, const AdamWOptions& options)
{
    if (!(options.beta1 >= 0.0 && options.beta1 < 1.0 && options.beta2 >= 0.0 && options.beta2 < 1.0))
        throw ConfigError("AdamW betas must lie in [0, 1)");
    if (!(options.eps > 0.0) || options.weight_decay < 0.0)
        throw ConfigError("AdamW eps must be positive and weight decay non-negative");
    AdamWState s;
    s.options = options;
    for (const auto& e : params) {
        s.first_moment.push_back(Tensor::zeros(e.tensor.shape(), e.tensor.dtype()));
        s.second_moment.push_back(Tensor::zeros(e.tensor.shape(), e.tensor.dtype()));
    }
    s.param_steps.assign(params.size(), 0);
    return s;
}

FreezeMask freeze_none(const ParamSet& params) { return {std::vector<bool>(params.size(), false)}; }

FreezeMask freeze_backbone(const ParamSet& params)
{
    FreezeMask m{std::vector<bool>(params.size(), false)};
    for (std::size_t i = 0; i < params.size(); ++i)
        m.frozen[i] = !is_head_param(params[i].name);
    return m;
}

void adamw_step(ParamSet& params, const GradSet& grads, AdamWState& state, double lr,
                std::span<const double> lr_factors, const FreezeMask* mask)
{
    if (grads.size() != params.size() || state.first_moment.size() != params.size())
        throw ContractError("adamw_step: parameter, gradient and state sizes differ");
    if (!lr_factors.empty() && lr_factors.size() != params.size())
        throw ContractError("adamw_step: lr_factors size mismatch");
    if (!(lr >= 0.0))
        throw ContractError("adamw_step: learning rate must be non-negative");

    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].tensor.shape() != grads[i].shape())
            throw DimensionError("adamw_step: gradient shape mismatch for " + params[i].name);
        const bool finite = dispatch(grads[i].dtype(), [&]<typename T>() {
            for (T g : grads[i].data<T>())
                if (!std::isfinite(g))
                    return false;
            return true;
        });
        if (!finite)
            throw NumericError("adamw_step: non-finite gradient in " + params[i].name + " at step " +
                               std::to_string(state.step + 1));
    }

    ++state.step;
    const auto& o = state.options;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (mask && mask->is_frozen(i))
            continue;
        const double step_lr = lr * (lr_factors.empty() ? 1.0 : lr_factors[i]);
        const auto t = ++state.param_steps[i];
        const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t));
        dispatch(params[i].tensor.dtype(), [&]<typename T>() {
            auto theta = params[i].tensor.mutable_data<T>();
            auto m = state.first_moment[i].mutable_data<T>();
            auto v = state.second_moment[i].mutable_data<T>();
            auto g = grads[i].data<T>();
            for (std::size_t k = 0; k < theta.size(); ++k) {
                theta[k] -= static_cast<T>(step_lr * o.weight_decay * theta[k]);
                m[k] = static_cast<T>(o.beta1 * m[k] + (1.0 - o.beta1) * g[k]);
                v[k] = static_cast<T>(o.beta2 * v[k] + (1.0 - o.beta2) * static_cast<double>(g[k]) * g[k]);
                const double mhat = m[k] / c1;
                const double vhat = v[k] / c2;
                theta[k] -= static_cast<T>(step_lr * mhat / (std::sqrt(vhat) + o.eps));
            }
        });
    }
}

double global_grad_norm(const GradSet& grads)
{
    double sq = 0.0;
    for (const auto& g : grads)
        dispatch(g.dtype(), [&]<typename T>() {
            for (T v : g.data<T>())
                sq += static_cast<double>(v) * v;
        });
    return std::sqrt(sq);
}

double clip_grad_norm(GradSet& grads, double max_norm)
{
    if (!(max_norm > 0.0))
        throw ContractError("clip_grad_norm: max_norm must be positive");
    const double norm = global_grad_norm(grads);
    if (norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& g : grads)
            dispatch(g.dtype(), [&]<typename T>() {
                for (T& v : g.mutable_data<T>())
                    v = static_cast<T>(v * f);
            });
    }
    return norm;
}

namespace {

double checked_time(double t, double total, const char* who)
{
    if (!(total > 0.0))
        throw ContractError(std::string(who) + ": total must be positive");
    const double slack = 1e-9 * total;
    if (t < -slack || t > total + slack)
        throw ContractError(std::string(who) + ": t=" + std::to_string(t) + " outside [0, " + std::to_string(total) +
                            "]");
    return std::clamp(t, 0.0, total);
}

} // namespace

double warmup_cosine_lr(double t, double t_warmup, double total, double base_lr)
{
    t = checked_time(t, total, "warmup_cosine_lr");
    if (t_warmup < 0.0 || t_warmup >= total)
        throw ContractError("warmup_cosine_lr: warmup must lie in [0, total)");
    if (t < t_warmup)
        return t / t_warmup * base_lr;
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * (t - t_warmup) / (total - t_warmup)));
}

double onecycle_lr(double t, double t_warmup, double total, double lr_max, double lr_min)
{
    t = checked_time(t, total, "onecycle_lr");
    if (t_warmup < 0.0 || t_warmup >= total)
        throw ContractError("onecycle_lr: warmup must lie in [0, total)");
    if (t < t_warmup)
        return lr_min + (lr_max - lr_min) * t / t_warmup;
    return lr_max - (lr_max - lr_min) * (t - t_warmup) / (total - t_warmup);
}

double layerwise_lr_factor(std::string_view name, const HVTConfig& config, double decay)
{
    if (!(decay > 0.0 && decay <= 1.0))
        throw ConfigError("layer-wise decay must lie in (0, 1]");
    const std::size_t total = config.total_blocks();
    // Global 1-based index of the first block in each stage.
    std::array<std::size_t, kNumStages> first{};
    std::size_t acc = 1;
    for (std::size_t s = 0; s < kNumStages; ++s) {
        first[s] = acc;
        acc += config.depths[s];
    }
    auto factor_for_block = [&](std::size_t global) {
        return std::pow(decay, static_cast<double>(total - global + 1));
    };

    if (name.starts_with("patch_embed/") || name == "pos_embed")
        return factor_for_block(1);
    if (name.starts_with("merge")) {
        const std::size_t s = static_cast<std::size_t>(name[5] - '0'); // merge s feeds stage s+1
        if (s >= 1 && s < kNumStages)
            return factor_for_block(first[s]);
    }
    if (name.starts_with("stage")) {
        const std::size_t s = static_cast<std::size_t>(name[5] - '0') - 1;
        const auto slash = name.find("/block");
        if (s < kNumStages && slash != std::string_view::npos) {
            const std::size_t k = std::stoul(std::string(name.substr(slash + 6)));
            return factor_for_block(first[s] + k);
        }
    }
    return 1.0;
}

std::vector<double> layerwise_lr_factors(const ParamSet& params, const HVTConfig& config, double decay)
{
    std::vector<double> out;
    out.reserve(params.size());
    for (const auto& e : params)
        out.push_back(layerwise_lr_factor(e.name, config, decay));
    return out;
}

EmaState ema_init(const ParamSet& params, double beta)
{
    if (!(beta >= 0.0 && beta < 1.0))
        throw ConfigError("EMA beta must lie in [0, 1)");
    EmaState e{params.clone(), beta};
    e.shadow.set_requires_grad(false);
    return e;
}

void ema_update(EmaState& ema, const ParamSet& params)
{
    if (!ema.shadow.same_layout(params))
        throw ContractError("ema_update: shadow layout does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
        dispatch(params[i].tensor.dtype(), [&]<typename T>() {
            auto s = ema.shadow[i].tensor.mutable_data<T>();
            auto p = params[i].tensor.data<T>();
            const T b = static_cast<T>(ema.beta), c = static_cast<T>(1.0 - ema.beta);
            for (std::size_t k = 0; k < s.size(); ++k)
                s[k] = b * s[k] + c * p[k];
        });
}

void ema_swap(EmaState& ema, ParamSet& params)
{
    if (!ema.shadow.same_layout(params))
        throw ContractError("ema_swap: shadow layout does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
        params[i].tensor.swap_values(ema.shadow[i].tensor);
}

} // namespace hvt

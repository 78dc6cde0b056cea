#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "hvt/params.hpp"
#include "hvt/rng.hpp"
#include "hvt/tensor.hpp"

namespace hvt {

inline constexpr std::size_t kNumStages = 4;

/// Architecture hyperparameters of the hierarchical backbone and its classifier.
///
/// Stage s runs `depths[s]` pre-norm transformer blocks of width `dims[s]` over a
/// token grid of (H/P / 2^s) x (W/P / 2^s). Consecutive stages are joined by a
/// 2x2 patch merge that doubles the width.
struct HVTConfig {
    std::size_t image_height = 448;
    std::size_t image_width = 448;
    std::size_t patch_size = 14;
    std::array<std::size_t, kNumStages> depths{3, 6, 24, 3};
    std::array<std::size_t, kNumStages> dims{192, 384, 768, 1536};
    std::array<std::size_t, kNumStages> heads{6, 12, 24, 48};
    std::size_t ffn_ratio = 4;
    double drop_path_max = 0.3;
    std::size_t num_classes = 7;
    /// Learned D x D projection after head concatenation.
    bool output_projection = true;
    /// Learned additive embedding on the stage-1 token grid.
    bool positional_embedding = true;
    /// Permit widths that do not follow D_{s+1} = 2 D_s.
    bool allow_dim_override = false;
    double ln_eps = 1e-5;
    double init_std = 0.02;

    /// Throws ConfigError describing the first violated constraint.
    void validate() const;

    std::size_t grid_height(std::size_t stage) const;
    std::size_t grid_width(std::size_t stage) const;
    std::size_t tokens(std::size_t stage) const { return grid_height(stage) * grid_width(stage); }
    std::size_t total_blocks() const;
    std::size_t patch_dim() const { return patch_size * patch_size * 3; }

    bool operator==(const HVTConfig&) const = default;

    // Named presets. Only "xl" follows published numbers; the others are local
    // reduced-size variants.
    static HVTConfig xl();
    static HVTConfig large();
    static HVTConfig base();
    static HVTConfig small();
    static HVTConfig tiny();
    static HVTConfig desk();
    static HVTConfig preset(std::string_view name);
};

enum class Mode { train, infer };

/// Truncated-normal(0.02) weights, zero biases, unit LayerNorm gains.
ParamSet init_params(const HVTConfig& config, RngStream& rng, DType dtype = DType::f32);

/// Total scalar count over every parameter tensor.
std::size_t count_params(const ParamSet& params);

struct AttentionWeights {
    Tensor wq, bq, wk, bk, wv, bv;
    Tensor wo, bo; // undefined when the output projection is disabled
};
struct FfnWeights {
    Tensor w1, b1, w2, b2;
};
struct BlockWeights {
    Tensor norm1_gain, norm1_bias;
    AttentionWeights attn;
    Tensor norm2_gain, norm2_bias;
    FfnWeights ffn;
};

AttentionWeights attention_weights(const ParamSet& params, std::string_view prefix);
FfnWeights ffn_weights(const ParamSet& params, std::string_view prefix);
BlockWeights block_weights(const ParamSet& params, std::string_view prefix);
std::string block_prefix(std::size_t stage, std::size_t block);

/// [B,H,W,3] images -> [B, N, D_1] tokens. Each token is the linear projection of
/// its P x P x 3 patch flattened in (row, column, channel) order.
Tensor patch_embed(const Tensor& images, const ParamSet& params, const HVTConfig& config);

struct AttentionOutput {
    Tensor output; ///< same shape as the input
    Tensor probs;  ///< [B, h, N, N]
};

/// Multi-head scaled dot-product self-attention over [B,N,D] (or [N,D]) tokens.
AttentionOutput mha(const Tensor& x, const AttentionWeights& w, std::size_t heads);

/// W_2 GELU(W_1 x + b_1) + b_2 over the last axis.
Tensor ffn(const Tensor& x, const FfnWeights& w);

/// Stochastic depth on the leading (sample) axis.
///
/// Train mode multiplies each sample by b / (1 - p) with b ~ Bernoulli(1 - p);
/// infer mode and p == 0 return x unchanged.
Tensor drop_path(const Tensor& x, double p, Mode mode, RngStream* rng);

/// p_l = p_max * l / L_total.
double drop_path_schedule(std::size_t layer, std::size_t total_layers, double p_max);

struct BlockOptions {
    double drop_prob = 0.0;
    Mode mode = Mode::infer;
    RngStream* rng = nullptr;
    double ln_eps = 1e-5;
};

struct BlockOutput {
    Tensor output;
    Tensor attention; ///< [B, h, N, N]
};

/// Z' = x + DP(MHA(LN(x))); out = Z' + DP(FFN(LN(Z'))).
BlockOutput transformer_block(const Tensor& x, const BlockWeights& w, std::size_t heads, const BlockOptions& options);

/// [B, Hs*Ws, D] -> [B, Hs*Ws/4, 2D]. The 2x2 neighbourhood is concatenated in the
/// order (even row, even col), (even row, odd col), (odd row, even col), (odd row, odd col).
Tensor patch_merge(const Tensor& x, std::size_t grid_h, std::size_t grid_w, const Tensor& weight, const Tensor& bias);

/// Attention probabilities of every final-stage block for one forward pass.
struct AttentionRecord {
    std::vector<Tensor> blocks; ///< each [B, h, N_4, N_4]
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
};

struct ForwardOptions {
    Mode mode = Mode::infer;
    RngStream* rng = nullptr;
    bool capture_attention = false;
    /// Also keep attention of stages 1-3 in ForwardOutput::stage_attention.
    bool capture_all_stages = false;
};

struct ForwardOutput {
    Tensor logits;              ///< [B, C]
    Tensor features;            ///< [B, D_4], global average of final tokens
    std::vector<Tensor> stages; ///< stage s output, [B, N_s, D_s]
    AttentionRecord attention;
    std::array<std::vector<Tensor>, kNumStages> stage_attention;
};

/// Backbone features only (no classifier): patch embed, four stages, global average pool.
ForwardOutput forward_features(const Tensor& images, const ParamSet& params, const HVTConfig& config,
                               const ForwardOptions& options = {});
/// Full classifier forward pass.
ForwardOutput forward(const Tensor& images, const ParamSet& params, const HVTConfig& config,
                      const ForwardOptions& options = {});

/// Whether a parameter belongs to the classification head.
bool is_head_param(std::string_view name);

} // namespace hvt

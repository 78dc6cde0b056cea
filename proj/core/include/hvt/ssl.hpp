#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hvt/augment.hpp"
#include "hvt/dataset.hpp"
#include "hvt/model.hpp"
#include "hvt/params.hpp"

namespace hvt {

/// u.v / (|u| |v|). Throws ContractError for a zero vector or a length mismatch.
double cosine_sim(std::span<const double> u, std::span<const double> v);

/// Contrastive loss over [2B, d] embeddings where rows i and i + B are the two
/// views of sample i. Each row is L2-normalized, then
///   loss = mean over all 2B anchors of -log( exp(s_ij / tau) / sum_{k != i} exp(s_ik / tau) ).
/// For B = 1 the positive is the only candidate and the loss is exactly 0.
Tensor nt_xent(const Tensor& embeddings, double temperature = 0.5);

/// Two-layer MLP D_4 -> hidden -> out_dim with GELU, parameters named proj/w1, proj/b1, proj/w2, proj/b2.
/// With batch_norm the hidden pre-activation is standardized over the batch and
/// rescaled by proj/bn_gain, proj/bn_bias.
ParamSet init_projection_head(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, RngStream& rng,
                              DType dtype = DType::f32, bool batch_norm = true, double init_std = 0.02);
/// Applies the head to [N, D_4] features. Batch statistics are used whenever the
/// head carries normalization parameters.
Tensor project(const Tensor& features, const ParamSet& head);

/// Per-column standardization over the rows of [N, H] (biased variance).
Tensor batch_standardize(const Tensor& x, double eps = 1e-5);

struct PretrainStep {
    std::size_t step = 0; ///< optimizer steps completed, 1-based
    double epoch = 0.0;   ///< fractional epochs consumed when the step began
    double lr = 0.0;
    double loss = 0.0;    ///< mean over the step's micro-batches
    double grad_norm = 0.0;
};

struct PretrainOptions {
    std::size_t epochs = 80;
    /// Optimizer-step cap; 0 runs all epochs. The schedule spans the shorter of the two.
    std::size_t max_steps = 0;
    std::size_t batch_size = 32;
    std::size_t accumulation = 2;
    double lr = 5e-4;
    double weight_decay = 0.05;
    double warmup_epochs = 10.0;
    double clip_norm = 1.0;
    double temperature = 0.5;
    std::size_t proj_hidden = 0; ///< 0 uses the backbone width
    std::size_t proj_dim = 128;
    bool proj_batch_norm = true;
    SimclrPolicy policy;
    Normalization norm;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::function<void(const PretrainStep&)> on_step;
    std::size_t checkpoint_every = 0;
    std::function<void(std::size_t step, const ParamSet& backbone, const ParamSet& head)> on_checkpoint;
};

struct PretrainResult {
    ParamSet backbone; ///< full model parameter set; the classifier head is left untouched
    ParamSet head;     ///< projection head
    std::vector<PretrainStep> log;
};

/// SimCLR pre-training of `initial` (copied, not modified) on unlabeled images.
/// Negatives are drawn from within each micro-batch. Throws InputError for fewer than two images.
PretrainResult pretrain(const ParamSet& initial, const HVTConfig& config, const ImageSet& data,
                        const PretrainOptions& options);

/// Pooled backbone features [N, D_4] in inference mode, computed in batches.
std::vector<std::vector<double>> extract_features(const ParamSet& params, const HVTConfig& config, const ImageSet& set,
                                                  const Normalization& norm, std::size_t batch_size = 64);

struct LinearProbeOptions {
    std::size_t iterations = 500;
    double lr = 0.05;
    double weight_decay = 1e-4;
};

struct LinearProbeResult {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
};

/// Multinomial logistic regression on standardized features, full-batch AdamW.
LinearProbeResult linear_probe(const std::vector<std::vector<double>>& train_x, std::span<const std::int32_t> train_y,
                               const std::vector<std::vector<double>>& test_x, std::span<const std::int32_t> test_y,
                               std::size_t classes, const LinearProbeOptions& options = {});

} // namespace hvt

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

/// [B, C] one-hot rows.
Tensor one_hot(std::span<const std::int32_t> labels, std::size_t classes, DType dtype = DType::f32);

/// -mean_b sum_c y_bc log softmax(logits)_bc, for hard or soft targets.
Tensor cross_entropy(const Tensor& logits, const Tensor& targets);

/// -mean_b sum_c alpha_c (1 - p_bc)^gamma y_bc log max(p_bc, 1e-12).
/// An empty `alpha` means 1/C for every class.
Tensor focal_loss(const Tensor& probs, const Tensor& targets, double gamma = 2.0, std::span<const double> alpha = {});

struct LossOptions {
    double ce_weight = 0.7;
    double focal_weight = 0.3;
    double gamma = 2.0;
    std::vector<double> alpha; ///< per-class focal weights; empty means 1/C
};

/// ce_weight * CE(logits) + focal_weight * focal(softmax(logits)).
Tensor combined_loss(const Tensor& logits, const Tensor& targets, const LossOptions& options = {});

/// Images with soft targets; each target row sums to 1.
struct LabeledBatch {
    std::vector<Image> images;
    std::vector<std::vector<double>> targets;
};

LabeledBatch make_batch(const ImageSet& set, std::span<const std::size_t> indices, std::size_t classes);

/// x_i <- lambda x_i + (1 - lambda) x_partner[i], same for targets.
LabeledBatch mixup_with(const LabeledBatch& batch, double lambda, std::span<const std::size_t> partner);
/// Replaces `box` of each image with the partner's pixels. Targets mix by the kept
/// area fraction, which equals the mean of the binary keep-mask.
LabeledBatch cutmix_with(const LabeledBatch& batch, const CropBox& box, std::span<const std::size_t> partner);

/// Rectangle of area about (1 - lambda) H W centered at a uniform pixel, clipped to the image.
CropBox cutmix_box(std::size_t height, std::size_t width, double lambda, RngStream& rng);

struct MixOptions {
    double mixup_prob = 0.2;
    double mixup_alpha = 0.2;
    double cutmix_prob = 0.5;
    double cutmix_alpha = 1.0;
};

struct MixRecord {
    enum class Kind { none, mixup, cutmix } kind = Kind::none;
    double lambda = 1.0;
    std::vector<std::size_t> partner;
    CropBox box;
};

/// With probability p: lambda ~ Beta(alpha, alpha), partners from a random permutation.
LabeledBatch mixup(const LabeledBatch& batch, double alpha, double p, RngStream& rng, MixRecord* record = nullptr);
LabeledBatch cutmix(const LabeledBatch& batch, double alpha, double p, RngStream& rng, MixRecord* record = nullptr);
/// The two are exclusive per batch: CutMix is rolled first, MixUp only if CutMix was not applied.
LabeledBatch mix_batch(const LabeledBatch& batch, const MixOptions& options, RngStream& rng,
                       MixRecord* record = nullptr);

struct FinetuneEpoch {
    std::size_t epoch = 0; ///< 1-based
    std::size_t steps = 0; ///< optimizer steps completed so far
    double lr = 0.0;       ///< learning rate of the epoch's last step
    double train_loss = 0.0;
    double train_accuracy = -1.0; ///< -1 unless FinetuneOptions::eval_train
    double val_accuracy = 0.0;
    double val_accuracy_ema = 0.0;
    bool backbone_frozen = false;
};

struct FinetuneOptions {
    std::size_t epochs = 100;
    std::size_t max_steps = 0; ///< optimizer-step cap; 0 runs all epochs
    std::size_t batch_size = 16;
    std::size_t accumulation = 2;
    double lr_max = 0.1;
    double lr_min = 1e-5;
    double warmup_fraction = 0.1;
    double weight_decay = 1e-4;
    double clip_norm = 5.0;
    double layer_decay = 0.65;
    std::size_t freeze_epochs = 5;
    double ema_beta = 0.9999;
    LossOptions loss;
    MixOptions mix;
    bool augment = true;
    FinetunePolicy policy;
    Normalization norm;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    /// Also measure inference-mode accuracy on the (unaugmented) training set each epoch.
    bool eval_train = false;
    /// Stop after the first epoch whose training accuracy reaches this value (needs eval_train).
    double stop_at_train_accuracy = 2.0;
    std::function<void(const FinetuneEpoch&)> on_epoch;
};

struct FinetuneResult {
    ParamSet final_params;
    ParamSet best_params; ///< raw weights of the epoch with the best validation accuracy
    ParamSet ema;         ///< EMA shadow after the last step
    std::size_t best_epoch = 0;
    double best_val_accuracy = -1.0;
    std::size_t steps = 0;
    std::vector<FinetuneEpoch> log;
};

/// Supervised fine-tuning with OneCycle, layer-wise decay, a frozen-backbone
/// warm start, EMA and best-epoch selection (ties keep the earlier epoch).
FinetuneResult finetune(const ParamSet& initial, const HVTConfig& config, const ImageSet& train, const ImageSet& val,
                        const FinetuneOptions& options);

/// Inference-mode logits [N][C] in batches.
std::vector<std::vector<double>> predict_logits(const ParamSet& params, const HVTConfig& config, const ImageSet& set,
                                                const Normalization& norm, std::size_t batch_size = 64);
double accuracy(const std::vector<std::vector<double>>& logits, std::span<const std::int32_t> labels);

/// Four corner crops and a center crop of side ratio * input, resized back to the
/// input size, each with and without a horizontal flip (10 views).
std::vector<Image> tta_views(const Image& image, std::size_t out_h, std::size_t out_w, double crop_ratio = 0.875);
/// Mean softmax over the ten TTA views of one already-normalized image.
std::vector<double> tta_predict(const Image& image, const ParamSet& params, const HVTConfig& config,
                                double crop_ratio = 0.875);

} // namespace hvt

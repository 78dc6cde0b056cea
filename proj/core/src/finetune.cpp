#include "hvt/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hvt/errors.hpp"
#include "hvt/ops.hpp"
#include "hvt/optim.hpp"
#include "hvt/parallel.hpp"

namespace hvt {

namespace {

constexpr double kProbFloor = 1e-12;

enum : std::uint64_t { kOrderStream = 11, kAugmentStream = 12, kMixStream = 13, kDropPathStream = 14 };

void check_targets(const Tensor& pred, const Tensor& targets, const char* op)
{
    if (pred.dim() != 2 || pred.shape() != targets.shape())
        throw DimensionError(std::string(op) + ": expected matching [B, C] inputs, got " + shape_str(pred.shape()) +
                             " and " + shape_str(targets.shape()));
}

void check_partner(const LabeledBatch& batch, std::span<const std::size_t> partner)
{
    if (batch.images.size() < 2 || partner.size() != batch.images.size() || batch.targets.size() != batch.images.size())
        throw ContractError("mixing needs at least two samples and one partner per sample");
    for (auto j : partner)
        if (j >= batch.images.size())
            throw ContractError("mixing partner index out of range");
}

Tensor targets_tensor(const LabeledBatch& b, DType dtype)
{
    const std::size_t c = b.targets.front().size();
    std::vector<double> v;
    v.reserve(b.targets.size() * c);
    for (const auto& t : b.targets)
        v.insert(v.end(), t.begin(), t.end());
    return Tensor::from_values({b.targets.size(), c}, v, dtype);
}

double eval_accuracy(const ParamSet& params, const HVTConfig& config, const ImageSet& set, const Normalization& norm)
{
    return accuracy(predict_logits(params, config, set, norm), set.labels);
}

} // namespace

Tensor one_hot(std::span<const std::int32_t> labels, std::size_t classes, DType dtype)
{
    std::vector<double> v(labels.size() * classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw InputError("one_hot: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
        v[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return Tensor::from_values({labels.size(), classes}, v, dtype);
}

Tensor cross_entropy(const Tensor& logits, const Tensor& targets)
{
    check_targets(logits, targets, "cross_entropy");
    return scale(sum(mul(log_softmax(logits, 1), targets)), -1.0 / static_cast<double>(logits.size(0)));
}

Tensor focal_loss(const Tensor& probs, const Tensor& targets, double gamma, std::span<const double> alpha)
{
    check_targets(probs, targets, "focal_loss");
    if (!(gamma >= 0.0))
        throw ConfigError("focal_loss: gamma must be non-negative");
    const std::size_t B = probs.size(0), C = probs.size(1);
    if (!alpha.empty() && alpha.size() != C)
        throw ConfigError("focal_loss: alpha needs one weight per class");
    std::vector<double> a(C, 1.0 / static_cast<double>(C));
    if (!alpha.empty())
        a.assign(alpha.begin(), alpha.end());
    Tensor weight = Tensor::from_values({C}, a, probs.dtype());
    Tensor modulation = pow_scalar(clamp_min(add_scalar(scale(probs, -1.0), 1.0), 0.0), gamma);
    Tensor terms = mul(mul(modulation, mul(targets, weight)), log(clamp_min(probs, kProbFloor)));
    return scale(sum(terms), -1.0 / static_cast<double>(B));
}

Tensor combined_loss(const Tensor& logits, const Tensor& targets, const LossOptions& o)
{
    Tensor ce = cross_entropy(logits, targets);
    Tensor fl = focal_loss(softmax(logits, 1), targets, o.gamma, o.alpha);
    return add(scale(ce, o.ce_weight), scale(fl, o.focal_weight));
}

LabeledBatch make_batch(const ImageSet& set, std::span<const std::size_t> indices, std::size_t classes)
{
    LabeledBatch b;
    for (auto i : indices) {
        const auto label = set.labels.at(i);
        if (label < 0 || static_cast<std::size_t>(label) >= classes)
            throw InputError("make_batch: record " + std::to_string(i) + " has label " + std::to_string(label));
        b.images.push_back(set.images[i]);
        std::vector<double> t(classes, 0.0);
        t[static_cast<std::size_t>(label)] = 1.0;
        b.targets.push_back(std::move(t));
    }
    return b;
}

LabeledBatch mixup_with(const LabeledBatch& batch, double lambda, std::span<const std::size_t> partner)
{
    check_partner(batch, partner);
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw ContractError("mixup_with: lambda must lie in [0, 1]");
    LabeledBatch out = batch;
    for (std::size_t i = 0; i < batch.images.size(); ++i) {
        const auto& xi = batch.images[i].pixels;
        const auto& xj = batch.images[partner[i]].pixels;
        for (std::size_t k = 0; k < xi.size(); ++k)
            out.images[i].pixels[k] = static_cast<float>(lambda * xi[k] + (1.0 - lambda) * xj[k]);
        for (std::size_t c = 0; c < batch.targets[i].size(); ++c)
            out.targets[i][c] = lambda * batch.targets[i][c] + (1.0 - lambda) * batch.targets[partner[i]][c];
    }
    return out;
}

LabeledBatch cutmix_with(const LabeledBatch& batch, const CropBox& box, std::span<const std::size_t> partner)
{
    check_partner(batch, partner);
    const std::size_t H = batch.images[0].height, W = batch.images[0].width;
    if (box.top + box.height > H || box.left + box.width > W)
        throw ContractError("cutmix_with: box outside image");
    const double kept = 1.0 - static_cast<double>(box.height * box.width) / static_cast<double>(H * W);
    LabeledBatch out = batch;
    for (std::size_t i = 0; i < batch.images.size(); ++i) {
        const Image& src = batch.images[partner[i]];
        for (std::size_t y = box.top; y < box.top + box.height; ++y)
            for (std::size_t x = box.left; x < box.left + box.width; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    out.images[i].at(y, x, c) = src.at(y, x, c);
        for (std::size_t c = 0; c < batch.targets[i].size(); ++c)
            out.targets[i][c] = kept * batch.targets[i][c] + (1.0 - kept) * batch.targets[partner[i]][c];
    }
    return out;
}

CropBox cutmix_box(std::size_t height, std::size_t width, double lambda, RngStream& rng)
{
    const double r = std::sqrt(std::clamp(1.0 - lambda, 0.0, 1.0));
    const auto rh = static_cast<std::ptrdiff_t>(std::lround(r * static_cast<double>(height)));
    const auto rw = static_cast<std::ptrdiff_t>(std::lround(r * static_cast<double>(width)));
    const auto cy = static_cast<std::ptrdiff_t>(rng.index(height));
    const auto cx = static_cast<std::ptrdiff_t>(rng.index(width));
    const auto H = static_cast<std::ptrdiff_t>(height), W = static_cast<std::ptrdiff_t>(width);
    const std::ptrdiff_t y0 = std::clamp<std::ptrdiff_t>(cy - rh / 2, 0, H), y1 = std::clamp<std::ptrdiff_t>(cy - rh / 2 + rh, 0, H);
    const std::ptrdiff_t x0 = std::clamp<std::ptrdiff_t>(cx - rw / 2, 0, W), x1 = std::clamp<std::ptrdiff_t>(cx - rw / 2 + rw, 0, W);
    return {static_cast<std::size_t>(y0), static_cast<std::size_t>(x0), static_cast<std::size_t>(y1 - y0),
            static_cast<std::size_t>(x1 - x0)};
}

LabeledBatch mixup(const LabeledBatch& batch, double alpha, double p, RngStream& rng, MixRecord* record)
{
    if (batch.images.size() < 2)
        throw ContractError("mixup: batch needs at least two samples");
    if (!rng.bernoulli(p))
        return batch;
    const double lambda = rng.beta(alpha, alpha);
    const auto partner = rng.permutation(batch.images.size());
    if (record != nullptr)
        *record = {MixRecord::Kind::mixup, lambda, partner, {}};
    return mixup_with(batch, lambda, partner);
}

LabeledBatch cutmix(const LabeledBatch& batch, double alpha, double p, RngStream& rng, MixRecord* record)
{
    if (batch.images.size() < 2)
        throw ContractError("cutmix: batch needs at least two samples");
    if (!rng.bernoulli(p))
        return batch;
    const double lambda = rng.beta(alpha, alpha);
    const auto partner = rng.permutation(batch.images.size());
    const CropBox box = cutmix_box(batch.images[0].height, batch.images[0].width, lambda, rng);
    if (record != nullptr)
        *record = {MixRecord::Kind::cutmix, lambda, partner, box};
    return cutmix_with(batch, box, partner);
}

LabeledBatch mix_batch(const LabeledBatch& batch, const MixOptions& o, RngStream& rng, MixRecord* record)
{
    if (record != nullptr)
        *record = {};
    if (batch.images.size() < 2)
        return batch;
    if (rng.bernoulli(o.cutmix_prob))
        return cutmix(batch, o.cutmix_alpha, 1.0, rng, record);
    return mixup(batch, o.mixup_alpha, o.mixup_prob, rng, record);
}

FinetuneResult finetune(const ParamSet& initial, const HVTConfig& config, const ImageSet& train, const ImageSet& val,
                        const FinetuneOptions& o)
{
    config.validate();
    if (train.size() == 0)
        throw InputError("finetune: empty training split");
    if (val.size() == 0)
        throw InputError("finetune: empty validation split");
    if (train.height != config.image_height || train.width != config.image_width)
        throw InputError("finetune: training images do not match the model input size");
    if (o.batch_size == 0 || o.accumulation == 0)
        throw ConfigError("finetune: batch_size and accumulation must be positive");
    if (!(o.warmup_fraction > 0.0 && o.warmup_fraction < 1.0))
        throw ConfigError("finetune: warmup_fraction must lie in (0, 1)");

    const std::size_t classes = config.num_classes;
    const std::size_t batch = std::min(o.batch_size, train.size());
    const std::size_t micro_per_epoch = train.size() / batch;
    const std::size_t micro_per_step = std::min(o.accumulation, micro_per_epoch);
    const std::size_t steps_per_epoch = micro_per_epoch / micro_per_step;
    std::size_t total_steps = o.epochs * steps_per_epoch;
    if (o.max_steps > 0)
        total_steps = std::min(total_steps, o.max_steps);
    if (total_steps == 0)
        throw ConfigError("finetune: configuration yields zero optimizer steps");
    const double total_epochs = static_cast<double>(total_steps) / static_cast<double>(steps_per_epoch);
    const double warmup = o.warmup_fraction * total_epochs;

    FinetuneResult result;
    ParamSet params = initial.clone();
    params.set_requires_grad(true);
    const DType dtype = params[0].tensor.dtype();
    const std::vector<double> factors = layerwise_lr_factors(params, config, o.layer_decay);
    AdamWState state = adamw_init(params, {.weight_decay = o.weight_decay});
    EmaState ema = ema_init(params, o.ema_beta);
    const FreezeMask frozen = freeze_backbone(params), open = freeze_none(params);

    const RngStream order_root(o.seed, kOrderStream), aug_root(o.seed, kAugmentStream), mix_root(o.seed, kMixStream),
        dp_root(o.seed, kDropPathStream);
    std::size_t step = 0, micro = 0;
    for (std::size_t epoch = 0; step < total_steps; ++epoch) {
        const bool backbone_frozen = epoch < o.freeze_epochs;
        const FreezeMask& mask = backbone_frozen ? frozen : open;
        const auto order = order_root.derive(epoch).permutation(train.size());
        const RngStream epoch_aug = aug_root.derive(epoch);
        double loss_sum = 0.0, lr = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t s = 0; s < steps_per_epoch && step < total_steps; ++s, ++step) {
            const double t = static_cast<double>(step) / static_cast<double>(steps_per_epoch);
            lr = onecycle_lr(t, warmup, total_epochs, o.lr_max, o.lr_min);
            GradSet acc = zero_grads_like(params);
            for (std::size_t m = 0; m < micro_per_step; ++m, ++micro) {
                const std::size_t first = (s * micro_per_step + m) * batch;
                std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(first),
                                             order.begin() + static_cast<std::ptrdiff_t>(first + batch));
                LabeledBatch lb = make_batch(train, idx, classes);
                if (o.augment)
                    parallel_for(batch, o.threads, [&](std::size_t i) {
                        RngStream r = epoch_aug.derive(first + i);
                        lb.images[i] = finetune_augment(lb.images[i], o.policy, r).image;
                    });
                RngStream mix_rng = mix_root.derive(micro);
                lb = mix_batch(lb, o.mix, mix_rng);
                for (auto& img : lb.images)
                    img = normalize(img, o.norm);

                RngStream dp = dp_root.derive(micro);
                ForwardOptions fo;
                fo.mode = Mode::train;
                fo.rng = &dp;
                Tensor logits = forward(images_to_tensor(lb.images, dtype), params, config, fo).logits;
                Tensor loss = combined_loss(logits, targets_tensor(lb, dtype), o.loss);
                loss.backward();
                accumulate_grads(acc, collect_grads(params), 1.0 / static_cast<double>(micro_per_step));
                loss_sum += loss.item();
                ++loss_count;
            }
            clip_grad_norm(acc, o.clip_norm);
            adamw_step(params, acc, state, lr, factors, &mask);
            params.clear_grads();
            ema_update(ema, params);
        }

        FinetuneEpoch rec;
        rec.epoch = epoch + 1;
        rec.steps = step;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(loss_count, 1));
        rec.backbone_frozen = backbone_frozen;
        if (o.eval_train)
            rec.train_accuracy = eval_accuracy(params, config, train, o.norm);
        rec.val_accuracy = eval_accuracy(params, config, val, o.norm);
        ema_swap(ema, params);
        rec.val_accuracy_ema = eval_accuracy(params, config, val, o.norm);
        ema_swap(ema, params);
        if (rec.val_accuracy > result.best_val_accuracy) {
            result.best_val_accuracy = rec.val_accuracy;
            result.best_epoch = rec.epoch;
            result.best_params = params.clone();
        }
        result.log.push_back(rec);
        if (o.on_epoch)
            o.on_epoch(rec);
        if (o.eval_train && rec.train_accuracy >= o.stop_at_train_accuracy)
            break;
    }
    result.steps = step;
    result.final_params = std::move(params);
    result.ema = std::move(ema.shadow);
    return result;
}

std::vector<std::vector<double>> predict_logits(const ParamSet& params, const HVTConfig& config, const ImageSet& set,
                                                const Normalization& norm, std::size_t batch_size)
{
    NoGradGuard guard;
    std::vector<std::vector<double>> out;
    out.reserve(set.size());
    const DType dtype = params[0].tensor.dtype();
    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(set.size(), start + batch_size); ++i)
            idx.push_back(i);
        const Tensor l = forward(batch_tensor(set, idx, norm, dtype), params, config).logits;
        const auto v = l.to_vector();
        const std::size_t c = l.size(1);
        for (std::size_t r = 0; r < idx.size(); ++r)
            out.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(r * c), v.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
    }
    return out;
}

double accuracy(const std::vector<std::vector<double>>& logits, std::span<const std::int32_t> labels)
{
    if (logits.size() != labels.size() || logits.empty())
        throw InputError("accuracy: prediction and label counts differ or are zero");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const auto it = std::max_element(logits[i].begin(), logits[i].end());
        hit += static_cast<std::int32_t>(it - logits[i].begin()) == labels[i];
    }
    return static_cast<double>(hit) / static_cast<double>(logits.size());
}

std::vector<Image> tta_views(const Image& image, std::size_t out_h, std::size_t out_w, double crop_ratio)
{
    if (!(crop_ratio > 0.0 && crop_ratio <= 1.0))
        throw ConfigError("tta_views: crop ratio must lie in (0, 1]");
    const auto ch = static_cast<std::size_t>(std::lround(crop_ratio * static_cast<double>(out_h)));
    const auto cw = static_cast<std::size_t>(std::lround(crop_ratio * static_cast<double>(out_w)));
    if (image.height < ch || image.width < cw || ch == 0 || cw == 0)
        throw InputError("tta_views: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " is smaller than the " + std::to_string(ch) + "x" + std::to_string(cw) + " crop");
    const std::size_t H = image.height, W = image.width;
    const CropBox boxes[5] = {{0, 0, ch, cw},
                              {0, W - cw, ch, cw},
                              {H - ch, 0, ch, cw},
                              {H - ch, W - cw, ch, cw},
                              {(H - ch) / 2, (W - cw) / 2, ch, cw}};
    std::vector<Image> views;
    for (const auto& b : boxes) {
        views.push_back(resized_crop(image, b, out_h, out_w));
        views.push_back(hflip(views.back()));
    }
    return views;
}

std::vector<double> tta_predict(const Image& image, const ParamSet& params, const HVTConfig& config, double crop_ratio)
{
    NoGradGuard guard;
    const auto views = tta_views(image, config.image_height, config.image_width, crop_ratio);
    const Tensor probs = softmax(forward(images_to_tensor(views, params[0].tensor.dtype()), params, config).logits, 1);
    const auto v = probs.to_vector();
    const std::size_t C = probs.size(1);
    std::vector<double> out(C, 0.0);
    for (std::size_t k = 0; k < views.size(); ++k)
        for (std::size_t c = 0; c < C; ++c)
            out[c] += v[k * C + c] / static_cast<double>(views.size());
    return out;
}

} // namespace hvt

#include "hvt/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hvt/errors.hpp"
#include "hvt/ops.hpp"
#include "hvt/optim.hpp"
#include "hvt/parallel.hpp"

namespace hvt {

namespace {

// Large negative logit that removes self-similarity from the softmax without producing inf - inf.
constexpr double kMaskedLogit = -1e9;

enum : std::uint64_t { kOrderStream = 1, kAugmentStream = 2, kDropPathStream = 3, kHeadInitStream = 4 };

} // namespace

double cosine_sim(std::span<const double> u, std::span<const double> v)
{
    if (u.size() != v.size() || u.empty())
        throw ContractError("cosine_sim: vectors must be non-empty and of equal length");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0)
        throw ContractError("cosine_sim: zero vector");
    return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

Tensor nt_xent(const Tensor& embeddings, double temperature)
{
    if (!(temperature > 0.0))
        throw ConfigError("nt_xent: temperature must be positive");
    if (embeddings.dim() != 2 || embeddings.size(0) < 2 || embeddings.size(0) % 2 != 0)
        throw DimensionError("nt_xent: expected [2B, d] embeddings, got " + shape_str(embeddings.shape()));
    const std::size_t n = embeddings.size(0), half = n / 2;
    Tensor z = l2_normalize(embeddings);
    Tensor logits = scale(matmul(z, transpose(z)), 1.0 / temperature);

    std::vector<double> mask(n * n, 0.0), positives(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        mask[i * n + i] = kMaskedLogit;
        positives[i * n + (i + half) % n] = 1.0;
    }
    const DType dt = embeddings.dtype();
    Tensor logp = log_softmax(add(logits, Tensor::from_values({n, n}, mask, dt)), 1);
    return scale(sum(mul(logp, Tensor::from_values({n, n}, positives, dt))), -1.0 / static_cast<double>(n));
}

ParamSet init_projection_head(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, RngStream& rng, DType dtype,
                              bool batch_norm, double init_std)
{
    if (in_dim == 0 || hidden == 0 || out_dim == 0)
        throw ConfigError("init_projection_head: dimensions must be positive");
    auto weight = [&](std::size_t r, std::size_t c) {
        std::vector<double> v(r * c);
        for (auto& x : v)
            x = rng.truncated_normal(init_std);
        return Tensor::from_values({r, c}, v, dtype, true);
    };
    ParamSet p;
    p.add("proj/w1", weight(in_dim, hidden));
    p.add("proj/b1", Tensor::zeros({hidden}, dtype, true));
    if (batch_norm) {
        p.add("proj/bn_gain", Tensor::from_values({hidden}, std::vector<double>(hidden, 1.0), dtype, true));
        p.add("proj/bn_bias", Tensor::zeros({hidden}, dtype, true));
    }
    p.add("proj/w2", weight(hidden, out_dim));
    p.add("proj/b2", Tensor::zeros({out_dim}, dtype, true));
    return p;
}

Tensor batch_standardize(const Tensor& x, double eps)
{
    if (x.dim() != 2)
        throw DimensionError("batch_standardize: expected [N, H], got " + shape_str(x.shape()));
    Tensor centered = sub(x, mean(x, 0));
    Tensor var = mean(mul(centered, centered), 0);
    return mul(centered, pow_scalar(add_scalar(var, eps), -0.5));
}

Tensor project(const Tensor& features, const ParamSet& head)
{
    Tensor h = linear(features, head.at("proj/w1"), head.at("proj/b1"));
    if (head.contains("proj/bn_gain"))
        h = add(mul(batch_standardize(h), head.at("proj/bn_gain")), head.at("proj/bn_bias"));
    return linear(gelu(h), head.at("proj/w2"), head.at("proj/b2"));
}

PretrainResult pretrain(const ParamSet& initial, const HVTConfig& config, const ImageSet& data,
                        const PretrainOptions& o)
{
    config.validate();
    if (data.size() < 2)
        throw InputError("pretrain: need at least two unlabeled images, got " + std::to_string(data.size()));
    if (data.height != config.image_height || data.width != config.image_width)
        throw InputError("pretrain: images are " + std::to_string(data.height) + "x" + std::to_string(data.width) +
                         ", model expects " + std::to_string(config.image_height) + "x" +
                         std::to_string(config.image_width));
    if (o.batch_size == 0 || o.accumulation == 0)
        throw ConfigError("pretrain: batch_size and accumulation must be positive");

    const std::size_t batch = std::min(o.batch_size, data.size());
    const std::size_t micro_per_epoch = data.size() / batch;
    std::size_t total_steps = o.epochs * micro_per_epoch / o.accumulation;
    if (o.max_steps > 0)
        total_steps = std::min(total_steps, o.max_steps);
    if (total_steps == 0)
        throw ConfigError("pretrain: configuration yields zero optimizer steps");
    const double epochs_per_step = static_cast<double>(o.accumulation) / static_cast<double>(micro_per_epoch);
    const double total_epochs = static_cast<double>(total_steps) * epochs_per_step;
    if (!(o.warmup_epochs < total_epochs))
        throw ConfigError("pretrain: warmup of " + std::to_string(o.warmup_epochs) + " epochs is not shorter than the " +
                          std::to_string(total_epochs) + "-epoch schedule");

    PretrainResult result;
    result.backbone = initial.clone();
    result.backbone.set_requires_grad(true);
    const DType dtype = result.backbone[0].tensor.dtype();
    RngStream head_rng(o.seed, kHeadInitStream);
    const std::size_t width = config.dims[kNumStages - 1];
    result.head = init_projection_head(width, o.proj_hidden == 0 ? width : o.proj_hidden, o.proj_dim, head_rng, dtype,
                                       o.proj_batch_norm);

    // One optimizer view over both sets; the classifier head gets no gradient here and stays frozen.
    ParamSet all;
    for (auto& e : result.backbone)
        all.add(e.name, e.tensor);
    for (auto& e : result.head)
        all.add(e.name, e.tensor);
    FreezeMask mask = freeze_none(all);
    for (std::size_t i = 0; i < all.size(); ++i)
        mask.frozen[i] = is_head_param(all[i].name);
    AdamWState state = adamw_init(all, {.weight_decay = o.weight_decay});

    const RngStream order_root(o.seed, kOrderStream), aug_root(o.seed, kAugmentStream), dp_root(o.seed, kDropPathStream);
    std::vector<std::size_t> order;
    std::size_t order_epoch = static_cast<std::size_t>(-1);
    std::size_t micro = 0;

    for (std::size_t step = 0; step < total_steps; ++step) {
        const double t = static_cast<double>(step) * epochs_per_step;
        const double lr = warmup_cosine_lr(t, o.warmup_epochs, total_epochs, o.lr);
        GradSet acc = zero_grads_like(all);
        double loss_sum = 0.0;
        for (std::size_t a = 0; a < o.accumulation; ++a, ++micro) {
            const std::size_t epoch = micro / micro_per_epoch, k = micro % micro_per_epoch;
            if (epoch != order_epoch) {
                order = order_root.derive(epoch).permutation(data.size());
                order_epoch = epoch;
            }
            std::vector<Image> views(2 * batch);
            const RngStream epoch_aug = aug_root.derive(epoch);
            parallel_for(batch, o.threads, [&](std::size_t i) {
                const std::size_t pos = k * batch + i;
                RngStream r = epoch_aug.derive(pos);
                ViewPair pair = simclr_augment(data.images[order[pos]], o.policy, r);
                views[i] = normalize(pair.a.image, o.norm);
                views[batch + i] = normalize(pair.b.image, o.norm);
            });
            RngStream dp = dp_root.derive(micro);
            ForwardOptions fo;
            fo.mode = Mode::train;
            fo.rng = &dp;
            Tensor feats = forward_features(images_to_tensor(views, dtype), result.backbone, config, fo).features;
            Tensor loss = nt_xent(project(feats, result.head), o.temperature);
            loss.backward();
            accumulate_grads(acc, collect_grads(all), 1.0 / static_cast<double>(o.accumulation));
            loss_sum += loss.item();
        }
        const double norm = clip_grad_norm(acc, o.clip_norm);
        adamw_step(all, acc, state, lr, {}, &mask);
        all.clear_grads();

        PretrainStep rec{step + 1, t, lr, loss_sum / static_cast<double>(o.accumulation), norm};
        result.log.push_back(rec);
        if (o.on_step)
            o.on_step(rec);
        if (o.checkpoint_every > 0 && o.on_checkpoint && (step + 1) % o.checkpoint_every == 0)
            o.on_checkpoint(step + 1, result.backbone, result.head);
    }
    return result;
}

std::vector<std::vector<double>> extract_features(const ParamSet& params, const HVTConfig& config, const ImageSet& set,
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
        const Tensor f = forward_features(batch_tensor(set, idx, norm, dtype), params, config).features;
        const auto v = f.to_vector();
        const std::size_t d = f.size(1);
        for (std::size_t r = 0; r < idx.size(); ++r)
            out.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(r * d), v.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    }
    return out;
}

LinearProbeResult linear_probe(const std::vector<std::vector<double>>& train_x, std::span<const std::int32_t> train_y,
                               const std::vector<std::vector<double>>& test_x, std::span<const std::int32_t> test_y,
                               std::size_t classes, const LinearProbeOptions& o)
{
    if (train_x.empty() || train_x.size() != train_y.size() || test_x.size() != test_y.size())
        throw InputError("linear_probe: feature and label counts differ or training set is empty");
    const std::size_t d = train_x[0].size();
    std::vector<double> mu(d, 0.0), sd(d, 0.0);
    for (const auto& row : train_x)
        for (std::size_t j = 0; j < d; ++j)
            mu[j] += row[j] / static_cast<double>(train_x.size());
    for (const auto& row : train_x)
        for (std::size_t j = 0; j < d; ++j)
            sd[j] += (row[j] - mu[j]) * (row[j] - mu[j]) / static_cast<double>(train_x.size());
    for (auto& s : sd)
        s = std::sqrt(s) + 1e-8;

    auto to_tensor = [&](const std::vector<std::vector<double>>& x) {
        std::vector<double> v;
        v.reserve(x.size() * d);
        for (const auto& row : x) {
            if (row.size() != d)
                throw InputError("linear_probe: ragged feature rows");
            for (std::size_t j = 0; j < d; ++j)
                v.push_back((row[j] - mu[j]) / sd[j]);
        }
        return Tensor::from_values({x.size(), d}, v, DType::f64);
    };
    auto one_hot = [&](std::span<const std::int32_t> y) {
        std::vector<double> v(y.size() * classes, 0.0);
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= classes)
                throw InputError("linear_probe: label out of range");
            v[i * classes + static_cast<std::size_t>(y[i])] = 1.0;
        }
        return Tensor::from_values({y.size(), classes}, v, DType::f64);
    };
    const Tensor xtr = to_tensor(train_x), ytr = one_hot(train_y);

    ParamSet p;
    p.add("probe/weight", Tensor::zeros({d, classes}, DType::f64, true));
    p.add("probe/bias", Tensor::zeros({classes}, DType::f64, true));
    AdamWState state = adamw_init(p, {.weight_decay = o.weight_decay});
    for (std::size_t it = 0; it < o.iterations; ++it) {
        Tensor logp = log_softmax(linear(xtr, p.at("probe/weight"), p.at("probe/bias")), 1);
        Tensor loss = scale(sum(mul(logp, ytr)), -1.0 / static_cast<double>(train_x.size()));
        loss.backward();
        adamw_step(p, collect_grads(p), state, o.lr);
    }

    auto accuracy = [&](const std::vector<std::vector<double>>& x, std::span<const std::int32_t> y) {
        if (x.empty())
            return 0.0;
        NoGradGuard guard;
        const auto pred = argmax(linear(to_tensor(x), p.at("probe/weight"), p.at("probe/bias")), 1).to_vector();
        std::size_t hit = 0;
        for (std::size_t i = 0; i < y.size(); ++i)
            hit += static_cast<std::int32_t>(pred[i]) == y[i];
        return static_cast<double>(hit) / static_cast<double>(y.size());
    };
    return {accuracy(train_x, train_y), accuracy(test_x, test_y)};
}

} // namespace hvt

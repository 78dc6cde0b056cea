// Acceptance gate. Prints one line per criterion and exits non-zero if any selected
// criterion fails. `--criterion N` (repeatable) restricts the run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "cli.hpp"
#include "gradcheck.hpp"
#include "hvt/checkpoint.hpp"
#include "hvt/dataset.hpp"
#include "hvt/finetune.hpp"
#include "hvt/metrics.hpp"
#include "hvt/model.hpp"
#include "hvt/optim.hpp"
#include "hvt/rollout.hpp"
#include "hvt/ssl.hpp"

using namespace hvt;
using namespace hvt::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    // Records a sub-check; the first failure is reported first in the detail.
    void expect(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            detail << "FAILED " << what << "; ";
        }
    }
};

struct Criterion {
    int id;
    const char* name;
    double budget_s; ///< 0 means no runtime bound
    std::function<void(Outcome&)> run;
};

using Rows = std::vector<std::vector<double>>;

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void randomize(ParamSet& params, RngStream& rng, double scale)
{
    for (auto& e : params)
        dispatch(e.tensor.dtype(), [&]<typename T>() {
            for (auto& v : e.tensor.mutable_data<T>())
                v = static_cast<T>(scale * rng.normal());
        });
}

Tensor random_images(const HVTConfig& c, std::size_t batch, RngStream& rng, DType dtype = DType::f32)
{
    std::vector<double> v(batch * c.image_height * c.image_width * 3);
    for (auto& x : v)
        x = rng.uniform(-1.0, 1.0);
    return Tensor::from_values({batch, c.image_height, c.image_width, 3}, v, dtype);
}

std::vector<std::pair<std::string, Tensor>> leaves_with_prefix(ParamSet& p, std::string_view prefix)
{
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& e : p)
        if (e.name.starts_with(prefix))
            out.emplace_back(e.name, e.tensor);
    return out;
}

// ---------------------------------------------------------------------------

void shape_chain(Outcome& o)
{
    const HVTConfig c = HVTConfig::xl();
    RngStream rng(1);
    const ParamSet p = init_params(c, rng);
    const ForwardOutput out = forward(random_images(c, 1, rng), p, c);
    const std::size_t tokens[] = {1024, 256, 64, 16}, dims[] = {192, 384, 768, 1536};
    for (std::size_t s = 0; s < 4; ++s) {
        const Shape want{1, tokens[s], dims[s]};
        o.expect(out.stages[s].shape() == want, "stage " + std::to_string(s + 1) + " shape");
        o.detail << "stage" << s + 1 << " (" << out.stages[s].shape()[1] << "," << out.stages[s].shape()[2] << ") ";
    }
    o.expect(out.logits.shape() == Shape{1, 7}, "7 logits");
    o.detail << "logits " << out.logits.shape()[1];
}

void gradient_suite(Outcome& o)
{
    struct Case {
        const char* name;
        std::function<double(std::uint64_t)> worst;
    };
    const HVTConfig tiny = HVTConfig::tiny();
    const std::vector<Case> cases{
        {"matmul+linear",
         [](std::uint64_t s) {
             RngStream rng(s);
             Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({4, 5}, rng), bias = random_tensor({5}, rng);
             return grad_check([&] { return random_projection_loss(add(matmul(a, b), linear(a, b, bias)), s); },
                               {{"a", a}, {"b", b}, {"bias", bias}})
                 .max_rel_error;
         }},
        {"elementwise+reductions+layout",
         [](std::uint64_t s) {
             RngStream rng(s);
             Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({3, 4}, rng), c = random_tensor({2, 3, 4}, rng);
             Tensor pos = Tensor::from_values({4}, {rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(0.5, 2),
                                                    rng.uniform(0.5, 2)},
                                              DType::f64, true);
             auto fn = [&] {
                 Tensor t = sub(add(mul(a, c), b), scale(c, 0.3));
                 t = reshape(permute(concat({t, slice(a, 2, 1, 2)}, 2), {2, 0, 1}), {6, 6});
                 Tensor l = random_projection_loss(transpose(t), s);
                 l = add(l, sum(max(a, 1)));
                 l = add(l, sum(mean(exp(scale(c, 0.1)), 0)));
                 l = add(l, sum(add(log(pos), pow_scalar(pos, 2.5))));
                 l = add(l, sum(clamp_min(add_scalar(b, 0.05), 0.0)));
                 l = add(l, mean(sum(c, 2, true)));
                 return l;
             };
             return grad_check(fn, {{"a", a}, {"b", b}, {"c", c}, {"pos", pos}}).max_rel_error;
         }},
        {"softmax+log_softmax+l2_normalize",
         [](std::uint64_t s) {
             RngStream rng(s);
             Tensor x = random_tensor({3, 5}, rng);
             return grad_check(
                        [&] {
                            return add(random_projection_loss(softmax(x, 1), s),
                                       add(random_projection_loss(log_softmax(x, 0), s + 1),
                                           random_projection_loss(l2_normalize(x), s + 2)));
                        },
                        {{"x", x}})
                 .max_rel_error;
         }},
        {"layer_norm+gelu",
         [](std::uint64_t s) {
             RngStream rng(s);
             Tensor x = random_tensor({4, 6}, rng), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
             return grad_check([&] { return random_projection_loss(gelu(layer_norm(x, g, b)), s); },
                               {{"x", x}, {"g", g}, {"b", b}})
                 .max_rel_error;
         }},
        {"patch_embed+mha+ffn+block+merge",
         [&tiny](std::uint64_t s) {
             RngStream rng(s);
             ParamSet p = init_params(tiny, rng, DType::f64);
             randomize(p, rng, 0.3);
             Tensor img = random_images(tiny, 2, rng, DType::f64);
             Tensor x = random_tensor({2, 64, 8}, rng);
             const BlockWeights w = block_weights(p, block_prefix(0, 0));
             auto fn = [&] {
                 Tensor l = random_projection_loss(patch_embed(img, p, tiny), s);
                 l = add(l, random_projection_loss(mha(x, w.attn, 2).output, s + 1));
                 l = add(l, random_projection_loss(ffn(x, w.ffn), s + 2));
                 l = add(l, random_projection_loss(transformer_block(x, w, 2, {}).output, s + 3));
                 l = add(l, random_projection_loss(patch_merge(x, 8, 8, p.at("merge1/weight"), p.at("merge1/bias")),
                                                   s + 4));
                 return l;
             };
             auto leaves = leaves_with_prefix(p, "stage1/block0/");
             for (auto& e : leaves_with_prefix(p, "patch_embed/"))
                 leaves.push_back(e);
             for (auto& e : leaves_with_prefix(p, "merge1/"))
                 leaves.push_back(e);
             std::erase_if(leaves, [](const auto& e) { return e.first.ends_with("/bk"); });
             leaves.emplace_back("x", x);
             RngStream sampler(s + 100);
             return grad_check(fn, leaves, 1e-4, 6, &sampler).max_rel_error;
         }},
        {"nt_xent+projection head",
         [](std::uint64_t s) {
             RngStream rng(s);
             ParamSet head = init_projection_head(5, 7, 4, rng, DType::f64, true, 0.5);
             Tensor x = random_tensor({6, 5}, rng);
             std::vector<std::pair<std::string, Tensor>> leaves{{"x", x}};
             for (auto& e : head)
                 leaves.emplace_back(e.name, e.tensor);
             return grad_check([&] { return nt_xent(project(x, head), 0.5); }, leaves).max_rel_error;
         }},
        {"combined loss (soft targets)",
         [](std::uint64_t s) {
             RngStream rng(s);
             Tensor logits = random_tensor({4, 6}, rng, DType::f64, true, 1.5);
             std::vector<double> t(24);
             for (std::size_t r = 0; r < 4; ++r) {
                 double sum_r = 0;
                 for (std::size_t c = 0; c < 6; ++c)
                     sum_r += t[r * 6 + c] = rng.uniform() + 0.01;
                 for (std::size_t c = 0; c < 6; ++c)
                     t[r * 6 + c] /= sum_r;
             }
             const Tensor targets = Tensor::from_values({4, 6}, t, DType::f64);
             return grad_check([&] { return combined_loss(logits, targets); }, {{"logits", logits}}).max_rel_error;
         }},
        {"full tiny model",
         [&tiny](std::uint64_t s) {
             RngStream rng(s);
             ParamSet p = init_params(tiny, rng, DType::f64);
             randomize(p, rng, 0.3);
             Tensor img = random_images(tiny, 2, rng, DType::f64);
             std::vector<std::pair<std::string, Tensor>> leaves;
             // The key bias shifts a whole softmax row, so its exact gradient is zero.
             for (auto& e : p)
                 if (!e.name.ends_with("/bk"))
                     leaves.emplace_back(e.name, e.tensor);
             RngStream sampler(s + 200);
             return grad_check([&] { return random_projection_loss(forward(img, p, tiny).logits, s); }, leaves, 1e-4, 8,
                               &sampler)
                 .max_rel_error;
         }},
    };
    for (const auto& c : cases) {
        double worst = 0.0;
        for (std::uint64_t seed = 1; seed <= 10; ++seed)
            worst = std::max(worst, c.worst(seed));
        o.expect(worst < 1e-3, c.name);
        o.detail << c.name << " " << fmt(worst) << "; ";
    }
}

double brute_force_nt_xent(const Rows& z, double tau)
{
    const std::size_t n = z.size(), b = n / 2;
    auto sim = [&](std::size_t i, std::size_t k) {
        double dot = 0, ni = 0, nk = 0;
        for (std::size_t c = 0; c < z[i].size(); ++c) {
            dot += z[i][c] * z[k][c];
            ni += z[i][c] * z[i][c];
            nk += z[k][c] * z[k][c];
        }
        return dot / (std::sqrt(ni) * std::sqrt(nk));
    };
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i < b ? i + b : i - b;
        double denom = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i)
                denom += std::exp(sim(i, k) / tau);
        total += -std::log(std::exp(sim(i, j) / tau) / denom);
    }
    return total / static_cast<double>(n);
}

void nt_xent_oracle(Outcome& o)
{
    double worst = 0.0;
    bool zero = true;
    for (std::size_t b = 1; b <= 4; ++b)
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            RngStream rng(1000 * b + seed);
            Rows z(2 * b, std::vector<double>(8));
            std::vector<double> flat;
            for (auto& row : z)
                for (auto& v : row)
                    flat.push_back(v = rng.normal());
            const double loss = nt_xent(Tensor::from_values({2 * b, 8}, flat, DType::f64), 0.5).item();
            worst = std::max(worst, std::abs(loss - brute_force_nt_xent(z, 0.5)));
            if (b == 1)
                zero = zero && loss == 0.0;
        }
    o.expect(worst < 1e-6, "max |delta| < 1e-6");
    o.expect(zero, "B=1 exactly 0");
    o.detail << "max |delta| " << fmt(worst) << ", B=1 zero " << (zero ? "yes" : "no");
}

void loss_identities(Outcome& o)
{
    RngStream rng(4);
    const Tensor logits = random_tensor({8, 7}, rng, DType::f64, false, 2.0);
    std::vector<std::int32_t> labels;
    for (int i = 0; i < 8; ++i)
        labels.push_back(i % 7);
    const Tensor t = one_hot(labels, 7, DType::f64);
    const std::vector<double> alpha(7, 1.0);
    const double gap = std::abs(focal_loss(softmax(logits, 1), t, 0.0, alpha).item() - cross_entropy(logits, t).item());

    std::vector<double> perfect(8 * 7, 0.0);
    for (std::size_t i = 0; i < 8; ++i)
        perfect[i * 7 + static_cast<std::size_t>(labels[i])] = 1000.0;
    const double zero = combined_loss(Tensor::from_values({8, 7}, perfect, DType::f64), t).item();

    std::vector<double> p(7, 0.5 / 6.0), y(7, 0.0);
    p[0] = 0.5;
    y[0] = 1.0;
    const double example =
        focal_loss(Tensor::from_values({1, 7}, p, DType::f64), Tensor::from_values({1, 7}, y, DType::f64)).item();

    o.expect(gap < 1e-7, "focal(gamma 0, alpha 1) == CE");
    o.expect(std::abs(zero) < 1e-12, "combined loss on perfect predictions");
    o.expect(std::abs(example - 0.024755) < 1e-6, "focal example value");
    o.detail << "|focal-CE| " << fmt(gap) << ", perfect " << fmt(zero) << ", example " << fmt(example);
}

void scheduler_endpoints(Outcome& o)
{
    const double T = 200, tw = 10, eta = 5e-4;
    const double w0 = warmup_cosine_lr(0, tw, T, eta), w1 = warmup_cosine_lr(tw, tw, T, eta),
                 w2 = warmup_cosine_lr(T, tw, T, eta);
    o.expect(w0 == 0.0 && std::abs(w1 - eta) < 1e-15 && std::abs(w2) < 1e-15, "warmup-cosine endpoints");
    const double hi = 0.1, lo = 1e-5, ow = 0.1 * T;
    const double c0 = onecycle_lr(0, ow, T, hi, lo), c1 = onecycle_lr(ow, ow, T, hi, lo), c2 = onecycle_lr(T, ow, T, hi, lo);
    o.expect(std::abs(c0 - lo) < 1e-15 && std::abs(c1 - hi) < 1e-15 && std::abs(c2 - 1e-5) < 1e-15,
             "onecycle endpoints");
    double jump = 0.0;
    for (double t : {tw})
        jump = std::max(jump, std::abs(warmup_cosine_lr(t - 1e-12, tw, T, eta) - warmup_cosine_lr(t + 1e-12, tw, T, eta)));
    jump = std::max(jump, std::abs(onecycle_lr(ow - 1e-12, ow, T, hi, lo) - onecycle_lr(ow + 1e-12, ow, T, hi, lo)));
    o.expect(jump < 1e-12, "continuity at breakpoints");
    o.detail << "cosine (" << fmt(w0) << "," << fmt(w1) << "," << fmt(w2) << ") onecycle (" << fmt(c0) << "," << fmt(c1)
             << "," << fmt(c2) << ") max jump " << fmt(jump);
}

void stochastic_depth(Outcome& o)
{
    RngStream rng(6);
    const Tensor ones = Tensor::full({10000, 1}, 1.0, DType::f64);
    const auto v = drop_path(ones, 0.3, Mode::train, &rng).to_vector();
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / 10000.0;
    const double se = std::sqrt(0.3 / 0.7 / 10000.0);
    const Tensor x = random_tensor({5, 3}, rng, DType::f64, false);
    const bool identity = drop_path(x, 0.3, Mode::infer, &rng).to_vector() == x.to_vector();
    o.expect(std::abs(mean - 1.0) < 3 * se, "mean within 3 SE");
    o.expect(identity, "inference identity");
    o.detail << "mean " << fmt(mean) << " (" << fmt((mean - 1.0) / se) << " SE), infer identity "
             << (identity ? "yes" : "no");
}

ImageSet labeled(std::size_t per_class, std::uint64_t seed)
{
    SyntheticOptions so;
    so.per_class = per_class;
    so.unlabeled = 0;
    so.seed = seed;
    return generate_synthetic(so).labeled;
}

FinetuneOptions plain_finetune(std::size_t epochs)
{
    FinetuneOptions f;
    f.epochs = epochs;
    f.batch_size = 8;
    f.accumulation = 1;
    f.lr_max = 3e-3;
    f.augment = false;
    f.mix.mixup_prob = 0.0;
    f.mix.cutmix_prob = 0.0;
    return f;
}

bool same_values(const ParamSet& a, const ParamSet& b, bool backbone_only)
{
    for (std::size_t i = 0; i < a.size(); ++i)
        if ((!backbone_only || !is_head_param(a[i].name)) && a[i].tensor.to_vector() != b[i].tensor.to_vector())
            return false;
    return true;
}

void ema_and_freeze(Outcome& o)
{
    const HVTConfig c = HVTConfig::tiny();
    RngStream rng(7);
    const ParamSet initial = init_params(c, rng);
    const ImageSet train = labeled(6, 7), val = labeled(2, 8);

    FinetuneOptions f = plain_finetune(2);
    f.ema_beta = 0.0;
    f.freeze_epochs = 0;
    const FinetuneResult tracked = finetune(initial, c, train, val, f);
    o.expect(tracked.ema.identical(tracked.final_params), "beta 0 tracks weights");

    ParamSet live = tracked.final_params.clone();
    EmaState ema = ema_init(initial, 0.9);
    ema_update(ema, live);
    const ParamSet before = live.clone();
    ema_swap(ema, live);
    const bool swapped = !live.identical(before);
    ema_swap(ema, live);
    o.expect(swapped && live.identical(before), "swap round trip");

    FinetuneOptions g = plain_finetune(6);
    g.freeze_epochs = 5;
    std::vector<bool> frozen;
    g.on_epoch = [&](const FinetuneEpoch& e) { frozen.push_back(e.backbone_frozen); };
    FinetuneOptions g5 = g;
    g5.epochs = 5;
    const FinetuneResult five = finetune(initial, c, train, val, g5);
    const FinetuneResult six = finetune(initial, c, train, val, g);
    const bool backbone_kept = same_values(five.final_params, initial, true);
    const bool head_moved = !same_values(five.final_params, initial, false);
    const bool unfrozen_after = !same_values(six.final_params, initial, true);
    const std::vector<bool> want{true, true, true, true, true, true, true, true, true, true, false};
    o.expect(backbone_kept && head_moved, "backbone bit-identical over 5 frozen epochs");
    o.expect(unfrozen_after && frozen == want, "backbone trains from epoch 6");
    o.detail << "ema(beta 0)==weights " << tracked.ema.identical(tracked.final_params) << ", swap round trip "
             << live.identical(before) << ", frozen backbone identical " << backbone_kept << ", head moved "
             << head_moved << ", epoch 6 unfrozen " << unfrozen_after;
}

void desk_overfit(Outcome& o)
{
    HVTConfig c = HVTConfig::desk();
    c.drop_path_max = 0.0;
    const ImageSet train = labeled(20, 0);
    RngStream rng(0);
    const ParamSet initial = init_params(c, rng);
    FinetuneOptions f = plain_finetune(500);
    f.batch_size = 16;
    f.max_steps = 500;
    f.freeze_epochs = 0;
    f.weight_decay = 0.0;
    f.layer_decay = 1.0;
    f.ema_beta = 0.99;
    f.eval_train = true;
    f.stop_at_train_accuracy = 0.99;
    const FinetuneResult r = finetune(initial, c, train, train, f);
    const double acc = r.log.back().train_accuracy;
    o.expect(acc >= 0.99, "train accuracy >= 0.99");
    o.expect(r.steps <= 500, "within 500 steps");
    o.detail << "train accuracy " << fmt(acc) << " after " << r.steps << " steps, " << train.size() << " images";
}

void ssl_benefit(Outcome& o)
{
    const HVTConfig c = HVTConfig::tiny();
    std::vector<double> margins;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SyntheticOptions so;
        so.per_class = 130;
        so.unlabeled = 1000;
        so.seed = seed;
        const SyntheticData d = generate_synthetic(so);
        std::vector<std::size_t> tr, te;
        for (std::size_t i = 0; i < d.labeled.size(); ++i)
            (i < 200 ? tr : te).push_back(i);
        const ImageSet train = d.labeled.subset(tr), test = d.labeled.subset(te);
        RngStream rng(seed);
        const ParamSet initial = init_params(c, rng);
        const Normalization norm;
        auto probe = [&](const ParamSet& p) {
            return linear_probe(extract_features(p, c, train, norm), train.labels, extract_features(p, c, test, norm),
                                test.labels, 7)
                .test_accuracy;
        };
        const double base = probe(initial);

        PretrainOptions po;
        po.max_steps = 600;
        po.epochs = 1000;
        po.warmup_epochs = 0.5;
        po.batch_size = 32;
        po.accumulation = 1;
        po.lr = 3e-3;
        po.seed = seed;
        po.policy.crop_scale_min = 0.3;
        po.policy.jitter = {0.2, 0.2, 0.2, 0.05};
        po.policy.blur_kernel = 9;
        po.policy.blur_sigma_max = 1.0;
        const double ssl = probe(pretrain(initial, c, d.unlabeled, po).backbone);
        margins.push_back(ssl - base);
        o.detail << "seed " << seed << " " << fmt(base) << "->" << fmt(ssl) << "; ";
    }
    std::vector<double> sorted = margins;
    std::sort(sorted.begin(), sorted.end());
    o.expect(sorted[2] > 0.0, "median margin > 0");
    o.detail << "median margin " << fmt(sorted[2]);
}

struct Calibrated {
    Rows logits;
    std::vector<std::int32_t> labels;
};

Calibrated calibrated(std::size_t n, std::uint64_t seed)
{
    RngStream rng(seed);
    Calibrated s;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> z(5), p(5);
        for (auto& v : z)
            v = 2.0 * rng.normal();
        const double m = *std::max_element(z.begin(), z.end());
        double total = 0;
        for (std::size_t k = 0; k < 5; ++k)
            total += p[k] = std::exp(z[k] - m);
        double u = rng.uniform() * total, acc = 0;
        std::int32_t label = 4;
        for (std::size_t k = 0; k < 5; ++k)
            if (u < (acc += p[k])) {
                label = static_cast<std::int32_t>(k);
                break;
            }
        s.logits.push_back(z);
        s.labels.push_back(label);
    }
    return s;
}

void calibration(Outcome& o)
{
    const Calibrated a = calibrated(10000, 3);
    const double e = ece(PredictionSet::from_logits(a.logits, a.labels));
    o.expect(e < 0.02, "ECE < 0.02");

    Calibrated b = calibrated(40000, 5);
    for (auto& row : b.logits)
        for (auto& v : row)
            v *= 2.0;
    const TemperatureFit f = fit_temperature(b.logits, b.labels);
    o.expect(std::abs(f.temperature - 2.0) < 0.05, "T* = 2 +/- 0.05");
    o.expect(f.nll_after <= f.nll_before, "NLL(T*) <= NLL(1)");

    bool invariant = true;
    const auto base = PredictionSet::from_logits(b.logits, b.labels).predictions;
    for (double t : {0.5, 1.15, f.temperature, 10.0})
        invariant = invariant && PredictionSet::from_logits(b.logits, b.labels, t).predictions == base;
    o.expect(invariant, "argmax invariance");
    o.detail << "ECE " << fmt(e) << ", T* " << fmt(f.temperature) << ", NLL " << fmt(f.nll_before) << "->"
             << fmt(f.nll_after) << ", argmax invariant " << (invariant ? "yes" : "no");
}

void mcnemar(Outcome& o)
{
    const double p15 = mcnemar_from_counts(15, 0).p_value;
    o.expect(std::abs(p15 - 6.1e-5) < 1e-6, "b=15 c=0");
    double worst_equal = 1.0;
    for (std::size_t b : {1, 2, 5, 10, 13, 25, 50, 200})
        worst_equal = std::min(worst_equal, mcnemar_from_counts(b, b).p_value);
    o.expect(worst_equal >= 0.75, "b=c");
    RngStream rng(11);
    std::vector<bool> x, y;
    for (int i = 0; i < 300; ++i) {
        x.push_back(rng.bernoulli(0.75));
        y.push_back(rng.bernoulli(0.7));
    }
    const McNemarResult xy = mcnemar_test(x, y), yx = mcnemar_test(y, x);
    const bool symmetric = xy.p_value == yx.p_value && xy.statistic == yx.statistic && xy.b == yx.c;
    o.expect(symmetric, "swap symmetry");
    o.detail << "p(15,0) " << fmt(p15) << ", min p(b=c) " << fmt(worst_equal) << ", swap symmetric "
             << (symmetric ? "yes" : "no");
}

void param_count(Outcome& o)
{
    const HVTConfig c = HVTConfig::xl();
    RngStream rng(0);
    const std::size_t n = count_params(init_params(c, rng));
    HVTConfig no_wo = c;
    no_wo.output_projection = false;
    const std::size_t m = count_params(init_params(no_wo, rng));
    const double rel = static_cast<double>(n) / 158e6 - 1.0;
    o.expect(std::abs(rel) <= 0.10, "within 10% of 158M");
    o.detail << n << " parameters (" << fmt(100 * rel) << "% vs 158M; " << m
             << " without the attention output projection)";
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

void persistence(Outcome& o)
{
    const fs::path root = fs::temp_directory_path() / "hvt_acceptance_13";
    fs::remove_all(root);

    SyntheticOptions so;
    so.per_class = 3;
    so.unlabeled = 4;
    const SyntheticData d = generate_synthetic(so);
    fs::create_directories(root);
    save_images(root / "a.hvtimg", d.labeled);
    save_images(root / "b.hvtimg", load_images(root / "a.hvtimg"));
    const bool container = slurp(root / "a.hvtimg") == slurp(root / "b.hvtimg") && load_images(root / "b.hvtimg") == d.labeled;
    RngStream rng(2);
    Checkpoint ck;
    ck.config_text = "[model]\npreset = desk\n";
    ck.params = init_params(HVTConfig::desk(), rng);
    const auto bytes = serialize_checkpoint(ck);
    const bool checkpoint = serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes;
    o.expect(container, "container round trip");
    o.expect(checkpoint, "checkpoint round trip");

    const std::string config = std::string(HVT_SOURCE_DIR) + "/configs/desk.ini";
    auto pipeline = [&](const fs::path& dir) {
        fs::create_directories(dir);
        const std::string out = dir.string();
        std::ostringstream log, err;
        const std::vector<std::vector<std::string>> steps{
            {"gen-data", "--config", config, "--seed", "42", "--out", out},
            {"pretrain", "--config", config, "--data", out, "--out", out, "--max-steps", "200"},
            {"finetune", "--config", config, "--data", out, "--init", out + "/pretrain.ckpt", "--out", out,
             "--max-steps", "200"},
            {"eval", "--data", out, "--checkpoint", out + "/finetune.ckpt", "--out", out},
            {"calibrate", "--logits", out + "/logits.csv", "--out", out},
            {"rollout", "--data", out, "--checkpoint", out + "/finetune.ckpt", "--out", out},
        };
        for (const auto& s : steps)
            if (cli::run(s, log, err) != 0)
                return s[0] + ": " + err.str();
        return std::string{};
    };
    for (const char* run : {"run1", "run2"}) {
        const std::string failure = pipeline(root / run);
        o.expect(failure.empty(), std::string(run) + " " + failure);
        if (!failure.empty())
            return;
    }
    std::size_t compared = 0, differing = 0;
    for (const auto& entry : fs::directory_iterator(root / "run1")) {
        const fs::path other = root / "run2" / entry.path().filename();
        ++compared;
        if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) {
            ++differing;
            o.detail << "differs: " << entry.path().filename().string() << "; ";
        }
    }
    o.expect(differing == 0 && compared >= 15, "pipeline byte-reproducible");
    o.detail << "container " << container << ", checkpoint " << checkpoint << ", " << compared
             << " pipeline artifacts compared, " << differing << " differ";
}

bool row_stochastic(const SquareMatrix& m, double& worst)
{
    for (std::size_t i = 0; i < m.n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.n; ++j)
            s += m(i, j);
        worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst < 1e-5;
}

void rollout(Outcome& o)
{
    const HVTConfig c = HVTConfig::desk();
    RngStream rng(8);
    ParamSet p = init_params(c, rng);
    randomize(p, rng, 0.2);
    ForwardOptions fo;
    fo.capture_all_stages = true;
    const ForwardOutput out = forward(random_images(c, 2, rng), p, c, fo);
    double worst = 0.0, lo = 1.0, hi = 0.0;
    std::size_t matrices = 0;
    for (std::size_t s = 0; s < 4; ++s) {
        const AttentionRecord rec{out.stage_attention[s], c.grid_height(s), c.grid_width(s)};
        for (std::size_t sample = 0; sample < 2; ++sample) {
            const RolloutResult r = attention_rollout(rec, sample, 64, 64);
            for (const auto& m : r.steps) {
                row_stochastic(m, worst);
                ++matrices;
            }
            for (double v : r.heatmap) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    }
    o.expect(worst < 1e-5, "row sums");
    o.expect(lo >= 0.0 && hi <= 1.0, "heatmap in [0,1]");

    std::vector<SquareMatrix> eye(3, SquareMatrix{16, std::vector<double>(256, 0.0)});
    for (auto& m : eye)
        for (std::size_t i = 0; i < 16; ++i)
            m.values[i * 16 + i] = 1.0;
    const RolloutResult r = rollout_from_matrices(eye, 4, 4, 64, 64);
    const bool uniform = std::all_of(r.heatmap.begin(), r.heatmap.end(), [&](double v) { return v == r.heatmap[0]; });
    o.expect(uniform, "identity chain uniform");
    o.detail << matrices << " rollout matrices, max |row sum - 1| " << fmt(worst) << ", heatmap range [" << fmt(lo)
             << "," << fmt(hi) << "], identity uniform " << (uniform ? "yes" : "no");
}

const std::vector<Criterion>& criteria()
{
    static const std::vector<Criterion> all{
        {1, "XL shape chain", 60, shape_chain},
        {2, "gradient suite", 300, gradient_suite},
        {3, "NT-Xent oracle", 0, nt_xent_oracle},
        {4, "loss identities", 0, loss_identities},
        {5, "scheduler endpoints", 0, scheduler_endpoints},
        {6, "stochastic depth expectation", 0, stochastic_depth},
        {7, "EMA and freeze contracts", 0, ema_and_freeze},
        {8, "desk-scale overfit", 600, desk_overfit},
        {9, "SSL directional benefit", 1800, ssl_benefit},
        {10, "calibration machinery", 0, calibration},
        {11, "McNemar", 0, mcnemar},
        {12, "XL parameter count", 0, param_count},
        {13, "persistence and determinism", 2700, persistence},
        {14, "attention rollout", 0, rollout},
    };
    return all;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"acceptance checks"};
    std::vector<int> selected;
    app.add_option("--criterion", selected, "criterion number (repeatable); default all")->check(CLI::Range(1, 14));
    CLI11_PARSE(app, argc, argv);

    int failures = 0;
    for (const auto& c : criteria()) {
        if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end())
            continue;
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.run(o);
        } catch (const std::exception& e) {
            o.expect(false, std::string("exception: ") + e.what());
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_s > 0)
            o.expect(seconds < c.budget_s, "runtime budget " + fmt(c.budget_s) + " s");
        failures += !o.pass;
        std::printf("criterion %2d %s  %-30s %8.1fs  %s\n", c.id, o.pass ? "PASS" : "FAIL", c.name, seconds,
                    o.detail.str().c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}

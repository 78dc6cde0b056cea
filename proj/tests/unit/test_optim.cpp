#include <cmath>
#include <cstring>

#include "doctest.h"
#include "gradcheck.hpp"
#include "hvt/optim.hpp"

using namespace hvt;
using namespace hvt::testing;

namespace {

ParamSet two_params(DType dtype = DType::f64)
{
    ParamSet p;
    p.add("a", Tensor::from_values({3}, std::vector<double>{1.0, -2.0, 0.5}, dtype, true));
    p.add("head/weight", Tensor::from_values({2, 2}, std::vector<double>{0.1, 0.2, -0.3, 0.4}, dtype, true));
    return p;
}

GradSet grads_of(const ParamSet& p, std::vector<std::vector<double>> values)
{
    GradSet g;
    for (std::size_t i = 0; i < p.size(); ++i)
        g.push_back(Tensor::from_values(p[i].tensor.shape(), values[i], p[i].tensor.dtype()));
    return g;
}

// Scalar AdamW recurrence written out directly.
struct ScalarAdamW {
    double m = 0, v = 0;
    int t = 0;
    double step(double theta, double g, double lr, double wd, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
    {
        ++t;
        theta -= lr * wd * theta;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        return theta - lr * mh / (std::sqrt(vh) + eps);
    }
};

} // namespace

TEST_CASE("adamw_step")
{
    SUBCASE("zero gradient on the first step is pure decoupled decay")
    {
        ParamSet p = two_params();
        const auto before = p[0].tensor.to_vector();
        AdamWState s = adamw_init(p, {.weight_decay = 0.05});
        adamw_step(p, zero_grads_like(p), s, 1e-3);
        const auto after = p[0].tensor.to_vector();
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(after[i] - before[i] == doctest::Approx(-1e-3 * 0.05 * before[i]).epsilon(1e-12));
        CHECK(s.step == 1);
    }
    SUBCASE("constant gradient step approaches lr")
    {
        ParamSet p;
        p.add("w", Tensor::from_values({1}, std::vector<double>{0.0}, DType::f64));
        AdamWState s = adamw_init(p, {.weight_decay = 0.0});
        double prev = 0.0, last_step = 0.0;
        for (int i = 0; i < 200; ++i) {
            adamw_step(p, grads_of(p, {{0.37}}), s, 0.01);
            const double now = p[0].tensor.item();
            last_step = prev - now;
            prev = now;
        }
        CHECK(last_step == doctest::Approx(0.01).epsilon(1e-5));
    }
    SUBCASE("matches the scalar recurrence")
    {
        ParamSet p = two_params();
        AdamWState s = adamw_init(p, {.weight_decay = 0.1});
        std::vector<ScalarAdamW> ref(7);
        std::vector<double> theta;
        for (const auto& e : p)
            for (double v : e.tensor.to_vector())
                theta.push_back(v);
        RngStream rng(4);
        const std::vector<double> factors{0.5, 1.0};
        for (int step = 0; step < 25; ++step) {
            std::vector<double> g(7);
            for (auto& x : g)
                x = rng.normal();
            adamw_step(p, grads_of(p, {{g[0], g[1], g[2]}, {g[3], g[4], g[5], g[6]}}), s, 0.01, factors);
            for (std::size_t i = 0; i < 7; ++i)
                theta[i] = ref[i].step(theta[i], g[i], 0.01 * (i < 3 ? 0.5 : 1.0), 0.1);
        }
        std::vector<double> got = p[0].tensor.to_vector();
        for (double v : p[1].tensor.to_vector())
            got.push_back(v);
        for (std::size_t i = 0; i < 7; ++i)
            CHECK(got[i] == doctest::Approx(theta[i]).epsilon(1e-12));
    }
    SUBCASE("frozen parameters stay bit-identical")
    {
        ParamSet p = two_params(DType::f32);
        const auto before = p[0].tensor.to_vector();
        AdamWState s = adamw_init(p, {});
        FreezeMask mask = freeze_backbone(p);
        CHECK(mask.is_frozen(0));
        CHECK_FALSE(mask.is_frozen(1));
        const auto head_before = p[1].tensor.to_vector();
        for (int i = 0; i < 50; ++i)
            adamw_step(p, grads_of(p, {{1, 2, 3}, {1, 1, 1, 1}}), s, 0.1, {}, &mask);
        CHECK(p[0].tensor.to_vector() == before);
        CHECK(p[1].tensor.to_vector() != head_before);
        CHECK(s.param_steps[0] == 0);
        CHECK(s.param_steps[1] == 50);
    }
    SUBCASE("errors")
    {
        ParamSet p = two_params();
        AdamWState s = adamw_init(p, {});
        CHECK_THROWS_AS(adamw_step(p, grads_of(p, {{1, NAN, 0}, {0, 0, 0, 0}}), s, 0.1), NumericError);
        CHECK_THROWS_AS(adamw_step(p, zero_grads_like(p), s, -1.0), ContractError);
        GradSet short_grads = zero_grads_like(p);
        short_grads.pop_back();
        CHECK_THROWS_AS(adamw_step(p, short_grads, s, 0.1), ContractError);
    }
}

TEST_CASE("clip_grad_norm")
{
    ParamSet p;
    p.add("w", Tensor::zeros({2}, DType::f64));
    GradSet small = grads_of(p, {{0.3, 0.4}});
    CHECK(clip_grad_norm(small, 1.0) == doctest::Approx(0.5));
    CHECK(small[0].to_vector() == std::vector<double>{0.3, 0.4});

    GradSet big = grads_of(p, {{3.0, 4.0}});
    CHECK(clip_grad_norm(big, 1.0) == doctest::Approx(5.0));
    CHECK(global_grad_norm(big) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(big[0].to_vector()[0] == doctest::Approx(0.6));

    GradSet again = big;
    clip_grad_norm(again, 1.0);
    CHECK(again[0].to_vector() == big[0].to_vector());

    GradSet ft = grads_of(p, {{30.0, 40.0}});
    clip_grad_norm(ft, 5.0);
    CHECK(global_grad_norm(ft) == doctest::Approx(5.0).epsilon(1e-15));

    CHECK_THROWS_AS(clip_grad_norm(ft, 0.0), ContractError);
}

TEST_CASE("warmup_cosine_lr")
{
    const double T = 200, tw = 10, eta = 5e-4;
    CHECK(warmup_cosine_lr(0, tw, T, eta) == 0.0);
    CHECK(warmup_cosine_lr(tw, tw, T, eta) == doctest::Approx(5e-4).epsilon(1e-15));
    CHECK(std::abs(warmup_cosine_lr(T, tw, T, eta)) < 1e-20);
    CHECK(warmup_cosine_lr(5, tw, T, eta) == doctest::Approx(2.5e-4));
    CHECK(warmup_cosine_lr(105, tw, T, eta) == doctest::Approx(2.5e-4));
    CHECK(std::abs(warmup_cosine_lr(tw - 1e-12, tw, T, eta) - warmup_cosine_lr(tw, tw, T, eta)) < 1e-12);
    CHECK_THROWS_AS(warmup_cosine_lr(T + 1, tw, T, eta), ContractError);
    CHECK_THROWS_AS(warmup_cosine_lr(1, T, T, eta), ContractError);
    for (double t = tw; t < T; t += 0.5)
        CHECK(warmup_cosine_lr(t + 0.5, tw, T, eta) <= warmup_cosine_lr(t, tw, T, eta));
}

TEST_CASE("onecycle_lr")
{
    const double T = 100, tw = 10, hi = 0.1, lo = 1e-5;
    CHECK(onecycle_lr(0, tw, T, hi, lo) == doctest::Approx(lo));
    CHECK(onecycle_lr(tw, tw, T, hi, lo) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(onecycle_lr(T, tw, T, hi, lo) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(onecycle_lr(55, tw, T, hi, lo) == doctest::Approx((hi + lo) / 2));
    CHECK(std::abs(onecycle_lr(tw - 1e-12, tw, T, hi, lo) - onecycle_lr(tw, tw, T, hi, lo)) < 1e-12);
    CHECK_THROWS_AS(onecycle_lr(-1, tw, T, hi, lo), ContractError);
}

TEST_CASE("layerwise_lr_factors")
{
    const HVTConfig c = HVTConfig::xl();
    CHECK(layerwise_lr_factor("head/weight", c, 0.65) == 1.0);
    CHECK(layerwise_lr_factor("stage4/block2/attn/wq", c, 0.65) == doctest::Approx(0.65).epsilon(1e-15));
    CHECK(layerwise_lr_factor("stage4/block0/ffn/w1", c, 0.65) == doctest::Approx(0.274625).epsilon(1e-15));
    CHECK(layerwise_lr_factor("merge3/weight", c, 0.65) == doctest::Approx(0.274625).epsilon(1e-15));
    CHECK(layerwise_lr_factor("merge1/bias", c, 0.65) == layerwise_lr_factor("stage2/block0/norm1/gain", c, 0.65));
    CHECK(layerwise_lr_factor("patch_embed/weight", c, 0.65) == doctest::Approx(std::pow(0.65, 36)).epsilon(1e-12));
    CHECK(layerwise_lr_factor("pos_embed", c, 0.65) == layerwise_lr_factor("stage1/block0/attn/wk", c, 0.65));
    CHECK(layerwise_lr_factor("proj/w1", c, 0.65) == 1.0);
    CHECK_THROWS_AS(layerwise_lr_factor("head/weight", c, 0.0), ConfigError);

    // Monotone from the head down to the patch embedding, in forward-parameter order reversed.
    const HVTConfig t = HVTConfig::desk();
    RngStream rng(1);
    ParamSet p = init_params(t, rng);
    auto f = layerwise_lr_factors(p, t, 0.65);
    REQUIRE(f.size() == p.size());
    for (std::size_t i = 1; i < f.size(); ++i)
        CHECK(f[i] >= f[i - 1]);
}

TEST_CASE("ema")
{
    ParamSet p;
    p.add("w", Tensor::from_values({1}, std::vector<double>{1.0}, DType::f64));
    SUBCASE("beta 0 tracks current weights")
    {
        EmaState e = ema_init(p, 0.0);
        p[0].tensor.assign(Tensor::from_values({1}, std::vector<double>{7.5}, DType::f64));
        ema_update(e, p);
        CHECK(e.shadow[0].tensor.item() == 7.5);
    }
    SUBCASE("two-step recurrence")
    {
        EmaState e = ema_init(p, 0.5);
        ema_update(e, p); // 0.5*1 + 0.5*1
        p[0].tensor.assign(Tensor::from_values({1}, std::vector<double>{2.0}, DType::f64));
        ema_update(e, p); // 0.5*1 + 0.5*2
        CHECK(e.shadow[0].tensor.item() == 1.5);
    }
    SUBCASE("default decay and swap round trip")
    {
        ParamSet q = two_params(DType::f32);
        EmaState e = ema_init(q);
        CHECK(e.beta == 0.9999);
        ParamSet orig = q.clone();
        for (auto& n : q)
            n.tensor.assign(scale(n.tensor, 1.25));
        ema_update(e, q);
        ParamSet trained = q.clone();
        ema_swap(e, q);
        CHECK_FALSE(q.identical(trained));
        ema_swap(e, q);
        CHECK(q.identical(trained));
    }
    SUBCASE("shape drift")
    {
        EmaState e = ema_init(p, 0.5);
        ParamSet other = two_params();
        CHECK_THROWS_AS(ema_update(e, other), ContractError);
        CHECK_THROWS_AS(ema_init(p, 1.0), ConfigError);
    }
}

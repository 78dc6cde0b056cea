#include <benchmark/benchmark.h>

#include "hvt/augment.hpp"
#include "hvt/finetune.hpp"
#include "hvt/metrics.hpp"
#include "hvt/model.hpp"
#include "hvt/optim.hpp"
#include "hvt/rollout.hpp"
#include "hvt/ssl.hpp"

using namespace hvt;

namespace {

Tensor random_images(const HVTConfig& c, std::size_t batch, RngStream& rng)
{
    std::vector<double> v(batch * c.image_height * c.image_width * 3);
    for (auto& x : v)
        x = rng.uniform(-1.0, 1.0);
    return Tensor::from_values({batch, c.image_height, c.image_width, 3}, v, DType::f32);
}

} // namespace

static void BM_DeskForward(benchmark::State& state)
{
    const HVTConfig c = HVTConfig::desk();
    RngStream rng(1);
    const ParamSet p = init_params(c, rng);
    const Tensor x = random_images(c, static_cast<std::size_t>(state.range(0)), rng);
    NoGradGuard guard;
    for (auto _ : state) {
        ForwardOutput out = forward(x, p, c);
        benchmark::DoNotOptimize(out.logits);
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

static void BM_DeskTrainStep(benchmark::State& state)
{
    const HVTConfig c = HVTConfig::desk();
    RngStream rng(2);
    ParamSet p = init_params(c, rng);
    const std::size_t batch = static_cast<std::size_t>(state.range(0));
    const Tensor x = random_images(c, batch, rng);
    std::vector<std::int32_t> labels(batch);
    for (std::size_t i = 0; i < batch; ++i)
        labels[i] = static_cast<std::int32_t>(i % 7);
    const Tensor targets = one_hot(labels, 7);
    AdamWState opt = adamw_init(p, {});
    ForwardOptions fo;
    fo.mode = Mode::train;
    fo.rng = &rng;
    for (auto _ : state) {
        Tensor loss = combined_loss(forward(x, p, c, fo).logits, targets);
        loss.backward();
        GradSet g = collect_grads(p);
        clip_grad_norm(g, 5.0);
        adamw_step(p, g, opt, 1e-4);
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

static void BM_SimclrAugment(benchmark::State& state)
{
    RngStream rng(3);
    Image img(64, 64);
    for (auto& v : img.pixels)
        v = static_cast<float>(rng.uniform());
    SimclrPolicy policy;
    policy.blur_kernel = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        ViewPair pair = simclr_augment(img, policy, rng);
        benchmark::DoNotOptimize(pair);
    }
}

static void BM_NtXent(benchmark::State& state)
{
    const auto b = static_cast<std::size_t>(state.range(0));
    RngStream rng(4);
    std::vector<double> v(2 * b * 128);
    for (auto& x : v)
        x = rng.normal();
    Tensor z = Tensor::from_values({2 * b, 128}, v, DType::f32, true);
    for (auto _ : state) {
        Tensor loss = nt_xent(z, 0.5);
        loss.backward();
        benchmark::DoNotOptimize(loss);
    }
}

static void BM_FitTemperature(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    RngStream rng(5);
    std::vector<std::vector<double>> logits(n, std::vector<double>(7));
    std::vector<std::int32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : logits[i])
            v = 2.0 * rng.normal();
        labels[i] = static_cast<std::int32_t>(rng.index(7));
    }
    for (auto _ : state) {
        TemperatureFit f = fit_temperature(logits, labels);
        benchmark::DoNotOptimize(f);
    }
}

static void BM_Rollout(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    RngStream rng(6);
    std::vector<SquareMatrix> blocks(4, SquareMatrix{n, std::vector<double>(n * n)});
    for (auto& m : blocks)
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < n; ++c)
                s += m.values[r * n + c] = rng.uniform();
            for (std::size_t c = 0; c < n; ++c)
                m.values[r * n + c] /= s;
        }
    for (auto _ : state) {
        RolloutResult r = rollout_from_matrices(blocks, 1, n, 64, 64);
        benchmark::DoNotOptimize(r);
    }
}

BENCHMARK(BM_DeskForward)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DeskTrainStep)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SimclrAugment)->Arg(9)->Arg(23)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_NtXent)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_FitTemperature)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Rollout)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

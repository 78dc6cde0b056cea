#include <benchmark/benchmark.h>

#include "hvt/ops.hpp"
#include "hvt/rng.hpp"

using namespace hvt;

namespace {

Tensor random(Shape shape, std::uint64_t seed, bool requires_grad = false)
{
    RngStream rng(seed);
    std::size_t n = 1;
    for (auto d : shape)
        n *= d;
    std::vector<double> v(n);
    for (auto& x : v)
        x = rng.normal();
    return Tensor::from_values(shape, v, DType::f32, requires_grad);
}

} // namespace

static void BM_Matmul(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    Tensor a = random({n, n}, 1), b = random({n, n}, 2);
    NoGradGuard guard;
    for (auto _ : state) {
        Tensor c = matmul(a, b);
        benchmark::DoNotOptimize(c);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

static void BM_BatchedLinear(benchmark::State& state)
{
    // [B, N, D] tokens through a D x 4D projection, the FFN expansion shape.
    const auto d = static_cast<std::size_t>(state.range(0));
    Tensor x = random({8, 64, d}, 1), w = random({d, 4 * d}, 2), b = random({4 * d}, 3);
    NoGradGuard guard;
    for (auto _ : state) {
        Tensor y = linear(x, w, b);
        benchmark::DoNotOptimize(y);
    }
}

static void BM_Softmax(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    Tensor x = random({4, n, n}, 1);
    NoGradGuard guard;
    for (auto _ : state) {
        Tensor y = softmax(x, 2);
        benchmark::DoNotOptimize(y);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(4 * n * n));
}

static void BM_LayerNorm(benchmark::State& state)
{
    const auto d = static_cast<std::size_t>(state.range(0));
    Tensor x = random({8, 256, d}, 1), g = random({d}, 2), b = random({d}, 3);
    NoGradGuard guard;
    for (auto _ : state) {
        Tensor y = layer_norm(x, g, b);
        benchmark::DoNotOptimize(y);
    }
}

static void BM_MatmulBackward(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    Tensor a = random({n, n}, 1, true), b = random({n, n}, 2, true);
    for (auto _ : state) {
        Tensor loss = sum(gelu(matmul(a, b)));
        loss.backward();
        benchmark::DoNotOptimize(a.grad_vector());
    }
}

BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_BatchedLinear)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Softmax)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_LayerNorm)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

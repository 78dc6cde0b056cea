#include "hvt/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "hvt/errors.hpp"

namespace hvt {

std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(mix64(mix64(seed) ^ mix64(~stream_id)))
{
}

RngStream RngStream::derive(std::uint64_t key) const
{
    return RngStream(mix64(seed_ ^ mix64(stream_id_ + 0x51ed27f1ULL)), key);
}

std::uint64_t RngStream::next_u64() { return engine_(); }

double RngStream::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t RngStream::index(std::size_t n)
{
    if (n == 0)
        throw ContractError("RngStream::index: n must be positive");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
        r = engine_();
    } while (r >= limit);
    return static_cast<std::size_t>(r % n);
}

bool RngStream::bernoulli(double p) { return uniform() < p; }

double RngStream::normal()
{
    // Box-Muller; one of the pair is discarded so the stream position stays simple.
    double u1 = uniform();
    while (u1 <= 0.0)
        u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::truncated_normal(double sigma, double bound)
{
    for (;;) {
        const double z = normal();
        if (std::abs(z) <= bound)
            return z * sigma;
    }
}

double RngStream::gamma(double shape)
{
    if (!(shape > 0.0))
        throw ConfigError("gamma shape must be positive");
    if (shape < 1.0) {
        // Gamma(a) = Gamma(a + 1) * U^(1/a)
        double u = uniform();
        while (u <= 0.0)
            u = uniform();
        return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    // Marsaglia and Tsang.
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x)
            return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
            return d * v;
    }
}

double RngStream::beta(double a, double b)
{
    const double x = gamma(a);
    const double y = gamma(b);
    if (x + y <= 0.0)
        return 0.5;
    return x / (x + y);
}

std::vector<std::size_t> RngStream::permutation(std::size_t n)
{
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i)
        std::swap(p[i - 1], p[index(i)]);
    return p;
}

} // namespace hvt

#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace hvt {

/// Deterministic random stream keyed by (seed, stream_id).
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. All distributions are implemented here rather than taken from
/// <random>, whose distribution algorithms differ between standard libraries.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    /// Independent child stream; same (seed, stream_id, key) always yields the same child.
    RngStream derive(std::uint64_t key) const;

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);
    bool bernoulli(double p);
    double normal();
    /// Normal(0, sigma) resampled until it falls within [-bound*sigma, bound*sigma].
    double truncated_normal(double sigma, double bound = 2.0);
    double gamma(double shape);
    double beta(double a, double b);
    std::vector<std::size_t> permutation(std::size_t n);

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::mt19937_64 engine_;
};

/// splitmix64 finalizer, used for seed derivation.
std::uint64_t mix64(std::uint64_t x) noexcept;

} // namespace hvt

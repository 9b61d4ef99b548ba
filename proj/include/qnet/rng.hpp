#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>

namespace qnet {

/// SplitMix64 finalizer. Used both as a hash for seed derivation and as the
/// step function of the counter-based generator below.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Stream purposes for seed derivation. A (seed, purpose, keys...) tuple names
/// exactly one random stream, so results do not depend on evaluation order.
enum class StreamPurpose : std::uint64_t {
    Emission = 1,
    Photon = 2,
    Dark = 3,
    Sample = 4,
};

constexpr std::uint64_t derive_seed(std::uint64_t master, StreamPurpose purpose,
                                    std::initializer_list<std::uint64_t> keys) noexcept
{
    std::uint64_t h = mix64(master + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(purpose));
    for (std::uint64_t k : keys)
        h = mix64(h ^ (k + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
    return h;
}

/// Small counter-based generator satisfying UniformRandomBitGenerator.
/// Cheap to construct, so one instance per photon is fine.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept
    {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; always consumes exactly two draws.
    double normal() noexcept
    {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t state_;
};

}  // namespace qnet

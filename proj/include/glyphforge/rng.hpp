#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace glyphforge {

/// Counter-based SplitMix64 stream. The full state is (seed, counter): draw k of a
/// stream is a pure function of seed and k, which makes the state trivially serializable.
class Rng {
public:
    static constexpr std::uint8_t kAlgorithmId = 1;  // splitmix64

    explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() {
        ++counter_;
        std::uint64_t z = seed_ + counter_ * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) {
        const auto wide = static_cast<unsigned __int128>(next_u64()) * bound;
        return static_cast<std::uint64_t>(wide >> 64);
    }

    /// Standard normal via Box-Muller; consumes exactly two draws.
    double normal() {
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    friend bool operator==(const Rng&, const Rng&) = default;

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

/// Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

/// Derives an independent stream seed from a base seed and a salt.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    Rng mixer(base ^ (salt * 0xD1B54A32D192ED03ULL), salt);
    return mixer.next_u64();
}

}  // namespace glyphforge

#pragma once

#include <cstdint>
#include <random>

namespace kljn {

using Seed = std::uint64_t;
using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Named, non-overlapping substreams derived from one base seed.
enum class Stream : std::uint64_t {
    alice_noise = 1,
    bob_noise,
    alice_bits,
    bob_bits,
    eve,
    eve_noise_a,
    eve_noise_b,
    card,
    exchange,
    refresh,
    transaction,
};

constexpr Seed derive_seed(Seed base, Stream stream, std::uint64_t index = 0) noexcept {
    return mix64(mix64(base ^ (static_cast<std::uint64_t>(stream) << 56)) + mix64(index));
}

inline Rng make_rng(Seed seed) {
    return Rng{seed};
}

}  // namespace kljn

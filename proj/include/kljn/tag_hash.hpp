#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

#include "kljn/bitstring.hpp"
#include "kljn/noise_physics.hpp"

namespace kljn {

using Tag = std::uint64_t;

/// Carry-less product in GF(2^64) modulo x^64 + x^4 + x^3 + x + 1.
std::uint64_t gf64_mul(std::uint64_t a, std::uint64_t b) noexcept;

/**
 * Streaming polynomial universal hash over GF(2^64).
 *
 * The key segment is split into 64-bit words (MSB first, zero-padded); the
 * first word is the evaluation point k, the XOR of the rest is an output
 * mask. With the data cut into big-endian 64-bit blocks m_1..m_n (last one
 * zero-padded) and L the data length in bytes:
 *
 *   tag = k^(n+1) + m_1 k^n + ... + m_n k + L   (+ mask)
 */
class PolyTagger {
public:
    explicit PolyTagger(const BitString& key_segment);

    void update(std::span<const std::uint8_t> data);
    /// Feeds each double as its IEEE-754 bit pattern, big-endian.
    void update_samples(std::span<const double> samples);
    /// Feeds the trace's voltage samples followed by its current samples.
    void update_trace(const WireTrace& trace);
    Tag finish() const;

    std::uint64_t bytes_seen() const noexcept { return length_; }

private:
    void absorb_block(std::uint64_t block) noexcept;

    std::uint64_t point_ = 0;
    std::uint64_t mask_ = 0;
    std::uint64_t acc_ = 1;
    std::uint64_t length_ = 0;
    std::array<std::uint8_t, 8> pending_{};
    std::size_t pending_len_ = 0;
};

/// One-shot tag. Throws DomainError when the segment length differs from
/// segment_len.
Tag authenticate_tag(std::span<const std::uint8_t> data, const BitString& key_segment,
                     std::size_t segment_len);

}  // namespace kljn

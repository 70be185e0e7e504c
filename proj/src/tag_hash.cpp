#include "kljn/tag_hash.hpp"

#include <bit>
#include <cstring>

#include "kljn/errors.hpp"

namespace kljn {

std::uint64_t gf64_mul(std::uint64_t a, std::uint64_t b) noexcept {
    constexpr std::uint64_t kReduce = 0x1B;  // x^4 + x^3 + x + 1
    std::uint64_t r = 0;
    while (b != 0) {
        if (b & 1U) r ^= a;
        b >>= 1;
        const bool carry = (a >> 63) != 0;
        a <<= 1;
        if (carry) a ^= kReduce;
    }
    return r;
}

PolyTagger::PolyTagger(const BitString& key_segment) {
    const auto bits = key_segment.bits();
    for (std::size_t word = 0; word * 64 < bits.size() || word == 0; ++word) {
        std::uint64_t w = 0;
        for (std::size_t k = 0; k < 64; ++k) {
            const std::size_t i = word * 64 + k;
            w = (w << 1) | (i < bits.size() ? bits[i] : 0U);
        }
        if (word == 0) point_ = w;
        else mask_ ^= w;
    }
}

void PolyTagger::absorb_block(std::uint64_t block) noexcept {
    acc_ = gf64_mul(acc_, point_) ^ block;
}

void PolyTagger::update(std::span<const std::uint8_t> data) {
    length_ += data.size();
    for (std::uint8_t byte : data) {
        pending_[pending_len_++] = byte;
        if (pending_len_ == pending_.size()) {
            std::uint64_t block = 0;
            for (std::uint8_t b : pending_) block = (block << 8) | b;
            absorb_block(block);
            pending_len_ = 0;
        }
    }
}

void PolyTagger::update_samples(std::span<const double> samples) {
    for (double x : samples) {
        const auto bits = std::bit_cast<std::uint64_t>(x);
        std::array<std::uint8_t, 8> be{};
        for (std::size_t k = 0; k < 8; ++k) be[k] = static_cast<std::uint8_t>(bits >> (56 - 8 * k));
        update(be);
    }
}

void PolyTagger::update_trace(const WireTrace& trace) {
    update_samples(trace.voltage);
    update_samples(trace.current);
}

Tag PolyTagger::finish() const {
    std::uint64_t acc = acc_;
    if (pending_len_ > 0) {
        std::uint64_t block = 0;
        for (std::size_t k = 0; k < 8; ++k) block = (block << 8) | (k < pending_len_ ? pending_[k] : 0U);
        acc = gf64_mul(acc, point_) ^ block;
    }
    acc = gf64_mul(acc, point_) ^ length_;
    return acc ^ mask_;
}

Tag authenticate_tag(std::span<const std::uint8_t> data, const BitString& key_segment,
                     std::size_t segment_len) {
    if (key_segment.size() != segment_len)
        throw DomainError("authenticate_tag: key segment has wrong length");
    PolyTagger tagger(key_segment);
    tagger.update(data);
    return tagger.finish();
}

}  // namespace kljn

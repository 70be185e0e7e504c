#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kljn {

using Bit = std::uint8_t;

/// Where a bit-string came from. Only raw KLJN output may be amplified.
enum class Provenance { raw_kljn, amplified, key_c, key_b };

std::string_view to_string(Provenance p) noexcept;

/// Overwrites n bytes with zeros through a volatile pointer.
void secure_zero(void* ptr, std::size_t n) noexcept;

/**
 * Secret bit sequence, one bit per byte, tagged with its provenance.
 * Storage is zeroized on destruction and on zeroize().
 */
class BitString {
public:
    BitString() = default;
    explicit BitString(std::vector<Bit> bits, Provenance provenance = Provenance::raw_kljn);
    BitString(const BitString&) = default;
    BitString(BitString&& other) noexcept;
    BitString& operator=(const BitString& other);
    BitString& operator=(BitString&& other) noexcept;
    ~BitString();

    std::size_t size() const noexcept { return bits_.size(); }
    bool empty() const noexcept { return bits_.empty(); }
    Bit operator[](std::size_t i) const noexcept { return bits_[i]; }
    std::span<const Bit> bits() const noexcept { return bits_; }
    Provenance provenance() const noexcept { return provenance_; }

    void push_back(Bit b) { bits_.push_back(b ? 1 : 0); }

    /// Copy of [pos, pos + len). Throws DomainError when out of range.
    BitString slice(std::size_t pos, std::size_t len) const;

    /// Same bits under a new label. Allowed: raw_kljn -> amplified, and
    /// raw_kljn/amplified -> key_c/key_b. Anything else is a ProtocolError.
    BitString relabeled(Provenance to) const;

    /// Most-significant-bit-first hex; the final nibble is zero-padded.
    std::string to_hex() const;
    static BitString from_hex(std::string_view hex, std::size_t n_bits,
                              Provenance provenance = Provenance::raw_kljn);

    /// Packs into bytes, MSB first, zero-padded.
    std::vector<std::uint8_t> to_bytes() const;

    void zeroize() noexcept;

    /// Bit-wise equality; provenance is ignored.
    friend bool operator==(const BitString& a, const BitString& b) noexcept {
        return a.bits_ == b.bits_;
    }

private:
    std::vector<Bit> bits_;
    Provenance provenance_ = Provenance::raw_kljn;
};

}  // namespace kljn

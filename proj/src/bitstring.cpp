#include "kljn/bitstring.hpp"

#include <utility>

#include "kljn/errors.hpp"

namespace kljn {

std::string_view to_string(Provenance p) noexcept {
    switch (p) {
        case Provenance::raw_kljn: return "raw_kljn";
        case Provenance::amplified: return "amplified";
        case Provenance::key_c: return "key_c";
        case Provenance::key_b: return "key_b";
    }
    return "unknown";
}

void secure_zero(void* ptr, std::size_t n) noexcept {
    volatile auto* p = static_cast<volatile std::uint8_t*>(ptr);
    for (std::size_t i = 0; i != n; ++i) p[i] = 0;
}

BitString::BitString(std::vector<Bit> bits, Provenance provenance)
    : bits_(std::move(bits)), provenance_(provenance) {
    for (auto& b : bits_) b = b ? 1 : 0;
}

BitString::BitString(BitString&& other) noexcept
    : bits_(std::move(other.bits_)), provenance_(other.provenance_) {
    other.bits_.clear();
}

BitString& BitString::operator=(const BitString& other) {
    if (this != &other) {
        zeroize();
        bits_ = other.bits_;
        provenance_ = other.provenance_;
    }
    return *this;
}

BitString& BitString::operator=(BitString&& other) noexcept {
    if (this != &other) {
        zeroize();
        bits_ = std::move(other.bits_);
        provenance_ = other.provenance_;
        other.bits_.clear();
    }
    return *this;
}

BitString::~BitString() { zeroize(); }

void BitString::zeroize() noexcept {
    if (!bits_.empty()) secure_zero(bits_.data(), bits_.size());
    bits_.clear();
}

BitString BitString::slice(std::size_t pos, std::size_t len) const {
    if (pos > bits_.size() || len > bits_.size() - pos)
        throw DomainError("BitString::slice: range out of bounds");
    return BitString(std::vector<Bit>(bits_.begin() + static_cast<std::ptrdiff_t>(pos),
                                      bits_.begin() + static_cast<std::ptrdiff_t>(pos + len)),
                     provenance_);
}

BitString BitString::relabeled(Provenance to) const {
    const bool ok =
        (provenance_ == Provenance::raw_kljn && to == Provenance::amplified) ||
        ((provenance_ == Provenance::raw_kljn || provenance_ == Provenance::amplified) &&
         (to == Provenance::key_c || to == Provenance::key_b)) ||
        provenance_ == to;
    if (!ok)
        throw ProtocolError("BitString: illegal provenance change " +
                            std::string(to_string(provenance_)) + " -> " +
                            std::string(to_string(to)));
    BitString out(*this);
    out.provenance_ = to;
    return out;
}

std::string BitString::to_hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve((bits_.size() + 3) / 4);
    for (std::size_t i = 0; i < bits_.size(); i += 4) {
        unsigned nibble = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            nibble <<= 1;
            if (i + k < bits_.size()) nibble |= bits_[i + k];
        }
        out.push_back(kDigits[nibble]);
    }
    return out;
}

BitString BitString::from_hex(std::string_view hex, std::size_t n_bits, Provenance provenance) {
    if (hex.size() != (n_bits + 3) / 4)
        throw DomainError("BitString::from_hex: hex length does not match bit count");
    std::vector<Bit> bits;
    bits.reserve(hex.size() * 4);
    for (char c : hex) {
        unsigned v;
        if (c >= '0' && c <= '9') v = static_cast<unsigned>(c - '0');
        else if (c >= 'a' && c <= 'f') v = static_cast<unsigned>(c - 'a' + 10);
        else if (c >= 'A' && c <= 'F') v = static_cast<unsigned>(c - 'A' + 10);
        else throw DomainError("BitString::from_hex: invalid hex digit");
        for (int k = 3; k >= 0; --k) bits.push_back(static_cast<Bit>((v >> k) & 1U));
    }
    for (std::size_t i = n_bits; i < bits.size(); ++i)
        if (bits[i]) throw DomainError("BitString::from_hex: nonzero padding bits");
    bits.resize(n_bits);
    return BitString(std::move(bits), provenance);
}

std::vector<std::uint8_t> BitString::to_bytes() const {
    std::vector<std::uint8_t> out((bits_.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits_.size(); ++i)
        if (bits_[i]) out[i / 8] |= static_cast<std::uint8_t>(0x80U >> (i % 8));
    return out;
}

}  // namespace kljn

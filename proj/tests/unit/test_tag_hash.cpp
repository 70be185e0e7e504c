#include <gtest/gtest.h>

#include <string_view>
#include <vector>

#include "kljn/errors.hpp"
#include "kljn/rng.hpp"
#include "kljn/tag_hash.hpp"

using namespace kljn;

// Reference vectors come from a separate bitwise polynomial implementation
// over GF(2)[x] / (x^64 + x^4 + x^3 + x + 1).

namespace {

std::vector<std::uint8_t> bytes(std::string_view s) { return {s.begin(), s.end()}; }

BitString segment(std::string_view hex, std::size_t bits) {
    return BitString::from_hex(hex, bits, Provenance::key_c);
}

}  // namespace

TEST(Gf64Mul, ReferenceProducts) {
    EXPECT_EQ(gf64_mul(0x8000000000000000ULL, 2), 0x1BULL);
    EXPECT_EQ(gf64_mul(3, 7), 9u);
    EXPECT_EQ(gf64_mul(0x0123456789abcdefULL, 0xfedcba9876543210ULL), 0x48827ab55d976fa0ULL);
}

TEST(Gf64Mul, FieldLaws) {
    Rng rng = make_rng(1);
    for (int i = 0; i < 1000; ++i) {
        const std::uint64_t a = rng(), b = rng(), c = rng();
        EXPECT_EQ(gf64_mul(a, b), gf64_mul(b, a));
        EXPECT_EQ(gf64_mul(a, b ^ c), gf64_mul(a, b) ^ gf64_mul(a, c));
        EXPECT_EQ(gf64_mul(gf64_mul(a, b), c), gf64_mul(a, gf64_mul(b, c)));
        EXPECT_EQ(gf64_mul(a, 1), a);
    }
}

TEST(AuthenticateTag, ReferenceVectors) {
    const auto k = segment("0123456789abcdef", 64);
    EXPECT_EQ(authenticate_tag(bytes("abc"), k, 64), 0xa132c6595221220cULL);
    std::vector<std::uint8_t> ramp(20);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<std::uint8_t>(i);
    EXPECT_EQ(authenticate_tag(ramp, k, 64), 0x24e9cc61a149e18cULL);
    const auto wide = segment("0123456789abcdef00000000deadbeef", 128);
    EXPECT_EQ(authenticate_tag(ramp, wide, 128), 0x24e9cc617fe45f63ULL);
}

TEST(AuthenticateTag, EmptyDataIsWellDefined) {
    const auto k = segment("0123456789abcdef", 64);
    EXPECT_EQ(authenticate_tag({}, k, 64), 0x0123456789abcdefULL);
}

TEST(AuthenticateTag, OneKeyBitFlipChangesTag) {
    const auto a = authenticate_tag(bytes("abc"), segment("0123456789abcdef", 64), 64);
    const auto b = authenticate_tag(bytes("abc"), segment("0123456789abcdee", 64), 64);
    EXPECT_EQ(b, 0xc050a5595221220dULL);
    EXPECT_NE(a, b);
}

TEST(AuthenticateTag, Deterministic) {
    const auto k = segment("fedcba9876543210", 64);
    EXPECT_EQ(authenticate_tag(bytes("monitor data"), k, 64),
              authenticate_tag(bytes("monitor data"), k, 64));
}

TEST(AuthenticateTag, WrongSegmentLength) {
    EXPECT_THROW(authenticate_tag(bytes("x"), segment("01234567", 32), 64), DomainError);
}

TEST(PolyTagger, StreamingMatchesOneShot) {
    const auto k = segment("0123456789abcdef", 64);
    std::vector<std::uint8_t> data(1000);
    Rng rng = make_rng(8);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng());
    PolyTagger t(k);
    std::size_t pos = 0;
    for (std::size_t chunk : {1u, 7u, 8u, 13u, 64u, 907u}) {
        t.update(std::span(data).subspan(pos, chunk));
        pos += chunk;
    }
    ASSERT_EQ(pos, data.size());
    EXPECT_EQ(t.bytes_seen(), 1000u);
    EXPECT_EQ(t.finish(), authenticate_tag(data, k, 64));
}

TEST(PolyTagger, LengthIsBound) {
    // Trailing zero bytes must not collide with the shorter message.
    const auto k = segment("0123456789abcdef", 64);
    EXPECT_NE(authenticate_tag(bytes("abc"), k, 64),
              authenticate_tag(std::vector<std::uint8_t>{'a', 'b', 'c', 0}, k, 64));
}

TEST(PolyTagger, SamplesAreBigEndianDoubles) {
    const auto k = segment("0123456789abcdef", 64);
    PolyTagger a(k);
    a.update_samples(std::vector<double>{1.0});
    // 1.0 = 0x3ff0000000000000
    const std::vector<std::uint8_t> raw{0x3f, 0xf0, 0, 0, 0, 0, 0, 0};
    EXPECT_EQ(a.finish(), authenticate_tag(raw, k, 64));
}

TEST(PolyTagger, RandomKeysNeverForge) {
    // A guessed segment matches the genuine tag with probability ~2^-64.
    const auto genuine = segment("0123456789abcdef", 64);
    const auto data = bytes("voltage and current samples of one session");
    const Tag target = authenticate_tag(data, genuine, 64);
    Rng rng = make_rng(99);
    int forged = 0;
    for (int i = 0; i < 100000; ++i) {
        std::vector<Bit> guess(64);
        for (auto& b : guess) b = static_cast<Bit>(rng() >> 63);
        forged += authenticate_tag(data, BitString(guess, Provenance::key_c), 64) == target;
    }
    EXPECT_EQ(forged, 0);
}

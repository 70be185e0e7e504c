#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "kljn/adversary.hpp"
#include "kljn/card_protocol.hpp"
#include "kljn/errors.hpp"

using namespace kljn;

namespace {

CardIdentity test_identity(std::string number = "4000000000000002") {
    return CardIdentity::with_expiry(std::move(number), "T. Holder", "07/2031");
}

// Same public identity, uniformly guessed key C.
Card clone_of(const Card& genuine, Seed seed) {
    Rng rng = make_rng(seed);
    std::vector<Bit> guess(genuine.key_c.bits().size());
    for (auto& b : guess) b = static_cast<Bit>(rng() >> 63);
    Card clone;
    clone.identity = genuine.identity;
    clone.key_c = KeyC(BitString(std::move(guess), Provenance::key_c), genuine.key_c.segment_len(),
                       genuine.key_c.m_max(), genuine.key_c.generation());
    return clone;
}

class CardProtocol : public ::testing::Test {
protected:
    void SetUp() override {
        Rng rng = make_rng(2024);
        card = initialize_card(test_identity(), policy, rng, server);
    }

    AuthResult authenticate(Card& who, Seed seed, const SessionOptions& opt = {}) {
        return authenticate_session(who, terminal, server, cfg, seed, opt);
    }

    // Full good session: authenticate, transact, refresh.
    void full_session(Seed seed) {
        ASSERT_EQ(authenticate(card, seed).status, AuthStatus::authenticated);
        const std::vector<std::uint8_t> payload(16, 0x5a);
        ASSERT_TRUE(run_transaction(card, terminal, payload).verified);
        ASSERT_TRUE(refresh_key_c(card, terminal, server, cfg, seed).replaced);
    }

    const ServerRecord& record() { return *server.find(card.identity.card_number); }

    NoiseConfig cfg;
    KeyPolicy policy;
    Server server;
    Card card;
    Terminal terminal;
};

}  // namespace

// =============================================================================
// Key sizing
// =============================================================================

TEST(KeyLengthRequired, ReferenceValues) {
    EXPECT_EQ(key_length_required(1, 2), 1u);
    EXPECT_EQ(key_length_required(3, 1024), 30u);
    EXPECT_EQ(key_length_required(4, 1000), 40u);  // ceil(39.863...)
    EXPECT_EQ(key_length_required(5, 1024), 50u);
}

TEST(KeyLengthRequired, RangeChecks) {
    EXPECT_THROW(key_length_required(0, 2), DomainError);
    EXPECT_THROW(key_length_required(1, 1), DomainError);
}

TEST(KeyLengthRequired, NeverBelowProduct) {
    for (std::size_t m = 1; m <= 10; ++m)
        for (std::size_t n = 2; n <= 5000; n += 37)
            EXPECT_GE(static_cast<double>(key_length_required(m, n)),
                      static_cast<double>(m) * std::log2(static_cast<double>(n)) - 1e-9);
}

TEST(InitializeCard, MinimalPolicy) {
    Server server;
    Rng rng = make_rng(1);
    const KeyPolicy p{1, 2, 0};
    const Card c = initialize_card(test_identity(), p, rng, server);
    EXPECT_GE(c.key_c.bits().size(), 1u);
    EXPECT_EQ(c.key_c.m_max(), 1u);
    EXPECT_FALSE(c.key_b);
}

TEST(InitializeCard, SizedForMonitorLength) {
    Server server;
    Rng rng = make_rng(1);
    const KeyPolicy p{5, 1024, 0};
    const Card c = initialize_card(test_identity(), p, rng, server);
    EXPECT_GE(c.key_c.bits().size(), 50u);
}

TEST(InitializeCard, EverySizingSatisfiesTheBound) {
    Rng rng = make_rng(2);
    std::size_t serial = 0;
    for (std::size_t m = 1; m <= 8; ++m) {
        for (std::size_t n : {2u, 3u, 1000u, 1024u, 409600u}) {
            for (std::size_t floor : {0u, 64u}) {
                Server server;
                const Card c =
                    initialize_card(test_identity(std::to_string(++serial)), {m, n, floor}, rng, server);
                EXPECT_GE(static_cast<double>(c.key_c.bits().size()),
                          static_cast<double>(m) * std::log2(static_cast<double>(n)));
                EXPECT_EQ(server.find(c.identity.card_number)->key_c.bits(), c.key_c.bits());
            }
        }
    }
}

TEST(InitializeCard, DuplicateNumberRejected) {
    Server server;
    Rng rng = make_rng(3);
    initialize_card(test_identity(), KeyPolicy{}, rng, server);
    EXPECT_THROW(initialize_card(test_identity(), KeyPolicy{}, rng, server), ProtocolError);
}

TEST(CardIdentity, ExpiryFormat) {
    EXPECT_EQ(test_identity().expiry(), "07/2031");
    EXPECT_THROW(CardIdentity::with_expiry("1", "x", "13/2030"), DomainError);
    EXPECT_THROW(CardIdentity::with_expiry("1", "x", "2030"), DomainError);
}

// =============================================================================
// Keys
// =============================================================================

TEST(KeyC, SegmentsAreBurnedMonotonically) {
    KeyC c(BitString(std::vector<Bit>(12, 1), Provenance::key_c), 4, 3);
    EXPECT_EQ(c.consume_segment(1).size(), 4u);
    EXPECT_EQ(c.cursor(), 2u);
    EXPECT_THROW(c.consume_segment(1), ProtocolError);
    EXPECT_THROW(c.consume_segment(0), ProtocolError);
    EXPECT_NO_THROW(c.consume_segment(2));
    EXPECT_EQ(c.segments_left(), 0u);
    EXPECT_THROW(c.consume_segment(3), ProtocolError);
}

TEST(KeyC, ShortKeyRejected) {
    EXPECT_THROW(KeyC(BitString(std::vector<Bit>(11, 0)), 4, 3), DomainError);
}

TEST(KeyB, HandsOutEachBitOnce) {
    std::vector<Bit> raw(32);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<Bit>(i % 3 == 0);
    KeyB b(BitString(raw, Provenance::key_b));
    const auto first = b.take(10);
    const auto second = b.take(10);
    EXPECT_EQ(first, BitString(std::vector<Bit>(raw.begin(), raw.begin() + 10)));
    EXPECT_EQ(second, BitString(std::vector<Bit>(raw.begin() + 10, raw.begin() + 20)));
    EXPECT_EQ(b.remaining(), 12u);
    EXPECT_THROW(b.take(13), KeyExhaustedError);
    b.zeroize();
    EXPECT_TRUE(b.deleted());
    EXPECT_EQ(b.remaining(), 0u);
    EXPECT_THROW(b.take(1), ProtocolError);
}

// =============================================================================
// Session state machine
// =============================================================================

TEST(SessionLedger, HappyPathAndNoSkipping) {
    SessionLedger l;
    EXPECT_THROW(l.advance(Phase::authenticated), ProtocolError);
    for (Phase p : {Phase::identified, Phase::key_located, Phase::kljn_running, Phase::authenticated,
                    Phase::transacting, Phase::refreshing, Phase::closed})
        l.advance(p);
    EXPECT_EQ(l.phase(), Phase::closed);
    EXPECT_EQ(l.transcript().size(), 7u);
    EXPECT_THROW(l.advance(Phase::identified), ProtocolError);
}

TEST(SessionLedger, BrokenOnlyFromExchangeOrAuthenticated) {
    EXPECT_TRUE(phase_transition_allowed(Phase::kljn_running, Phase::broken));
    EXPECT_TRUE(phase_transition_allowed(Phase::authenticated, Phase::broken));
    EXPECT_FALSE(phase_transition_allowed(Phase::transacting, Phase::broken));
    EXPECT_FALSE(phase_transition_allowed(Phase::idle, Phase::broken));
    EXPECT_FALSE(phase_transition_allowed(Phase::broken, Phase::closed));
}

// =============================================================================
// Authentication
// =============================================================================

TEST_F(CardProtocol, GenuineCardAuthenticates) {
    const auto r = authenticate(card, 10);
    EXPECT_EQ(r.status, AuthStatus::authenticated);
    EXPECT_EQ(r.card_tag, r.terminal_tag);
    ASSERT_TRUE(card.key_b && terminal.key_b);
    EXPECT_EQ(card.key_b->size(), SessionOptions{}.key_b_bits());
    EXPECT_EQ(card.key_b->take(card.key_b->size()), terminal.key_b->take(terminal.key_b->size()));
    EXPECT_EQ(terminal.ledger.phase(), Phase::authenticated);
    EXPECT_EQ(r.segment, (SegmentUse{0, 0}));
    EXPECT_EQ(card.key_c.cursor(), 1u);
    EXPECT_EQ(record().key_c.cursor(), 1u);
}

TEST_F(CardProtocol, WrongKeyBreaksSession) {
    Card clone = clone_of(card, 77);
    const auto r = authenticate(clone, 11);
    EXPECT_EQ(r.status, AuthStatus::broken);
    EXPECT_NE(r.card_tag, r.terminal_tag);
    EXPECT_EQ(terminal.ledger.phase(), Phase::broken);
    EXPECT_EQ(record().broken_count_mirror, 1u);
    EXPECT_FALSE(clone.key_b);
    EXPECT_FALSE(terminal.key_b);
    // The burned segment is gone for the genuine card as well.
    EXPECT_EQ(record().key_c.cursor(), 1u);
    const auto next = authenticate(card, 12);
    EXPECT_EQ(next.status, AuthStatus::authenticated);
    EXPECT_EQ(next.segment, (SegmentUse{0, 1}));
}

TEST_F(CardProtocol, MBrokenSessionsCancelTheCard) {
    for (std::size_t k = 0; k < policy.m_max; ++k) {
        Card clone = clone_of(card, 100 + k);
        EXPECT_EQ(authenticate(clone, 20 + k).status, AuthStatus::broken);
        EXPECT_EQ(record().broken_count_mirror, k + 1);
        EXPECT_EQ(record().canceled, k + 1 >= policy.m_max);
    }
    const auto r = authenticate(card, 99);
    EXPECT_EQ(r.status, AuthStatus::refused);
    EXPECT_EQ(terminal.ledger.phase(), Phase::closed);
}

TEST_F(CardProtocol, UnknownIdentityRefusedWithoutConsumingSegments) {
    Card stranger = card;
    stranger.identity.card_number = "9999";
    const auto r = authenticate(stranger, 5);
    EXPECT_EQ(r.status, AuthStatus::refused);
    EXPECT_FALSE(r.segment);
    EXPECT_EQ(stranger.key_c.cursor(), 0u);
    EXPECT_EQ(record().key_c.cursor(), 0u);
}

TEST_F(CardProtocol, CanceledCardRefused) {
    card.canceled = true;
    EXPECT_EQ(authenticate(card, 5).status, AuthStatus::refused);
    EXPECT_EQ(card.key_c.cursor(), 0u);
}

TEST_F(CardProtocol, MitmDuringAuthenticationBreaksSession) {
    SessionOptions opt;
    opt.exchange.channel = mitm_channel();
    const auto r = authenticate(card, 6, opt);
    EXPECT_EQ(r.status, AuthStatus::broken);
    EXPECT_EQ(record().broken_count_mirror, 1u);
    EXPECT_EQ(r.segment, (SegmentUse{0, 0}));
    EXPECT_GE(r.stats.alarms, 1u);
}

TEST_F(CardProtocol, MonitorLengthDefault) {
    EXPECT_EQ(default_monitor_length(cfg, 256), 2u * cfg.samples_per_bit * 256u);
}

// =============================================================================
// Transaction
// =============================================================================

TEST_F(CardProtocol, ZeroPayloadExposesKeystream) {
    ASSERT_EQ(authenticate(card, 30).status, AuthStatus::authenticated);
    KeyB copy = *terminal.key_b;
    const std::vector<std::uint8_t> zeros(16, 0);
    const auto tx = run_transaction(card, terminal, zeros);
    EXPECT_EQ(tx.ciphertext, copy.take(128).to_bytes());
    EXPECT_TRUE(tx.verified);
    EXPECT_EQ(tx.key_bits_used, 128u);
    EXPECT_TRUE(card.key_b->deleted());
    EXPECT_TRUE(terminal.key_b->deleted());
    EXPECT_EQ(terminal.ledger.phase(), Phase::refreshing);
}

TEST_F(CardProtocol, KibiPayloadRoundTrips) {
    SessionOptions opt;
    opt.expected_payload_bytes = 1024;
    ASSERT_EQ(authenticate(card, 31, opt).status, AuthStatus::authenticated);
    Rng rng = make_rng(5);
    std::vector<std::uint8_t> payload(1024);
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
    const auto tx = run_transaction(card, terminal, payload);
    EXPECT_EQ(tx.decrypted, payload);
    EXPECT_NE(tx.ciphertext, payload);
    EXPECT_TRUE(tx.verified);
}

TEST_F(CardProtocol, SecondTransactionIsAHardError) {
    ASSERT_EQ(authenticate(card, 32).status, AuthStatus::authenticated);
    const std::vector<std::uint8_t> payload(4, 1);
    run_transaction(card, terminal, payload);
    EXPECT_THROW(run_transaction(card, terminal, payload), ProtocolError);
    EXPECT_THROW(card.key_b->take(1), ProtocolError);
}

TEST_F(CardProtocol, OversizedPayloadExhaustsAndStillDeletes) {
    ASSERT_EQ(authenticate(card, 33).status, AuthStatus::authenticated);
    const std::vector<std::uint8_t> payload(33, 0);  // key B holds 32 bytes
    EXPECT_THROW(run_transaction(card, terminal, payload), KeyExhaustedError);
    EXPECT_TRUE(card.key_b->deleted());
    EXPECT_TRUE(terminal.key_b->deleted());
    EXPECT_EQ(terminal.ledger.phase(), Phase::refreshing);
}

TEST_F(CardProtocol, TransactionNeedsAuthentication) {
    const std::vector<std::uint8_t> payload(4, 1);
    EXPECT_THROW(run_transaction(card, terminal, payload), ProtocolError);
}

// =============================================================================
// Refresh
// =============================================================================

TEST_F(CardProtocol, RefreshInstallsSynchronizedKey) {
    const BitString old_c = card.key_c.bits();
    full_session(40);
    EXPECT_EQ(card.key_c.bits(), record().key_c.bits());
    EXPECT_NE(card.key_c.bits(), old_c);
    EXPECT_EQ(card.key_c.cursor(), 0u);
    EXPECT_EQ(card.key_c.generation(), 1u);
    EXPECT_EQ(card.key_c.bits().size(), policy.key_bits());
    EXPECT_GE(card.key_c.bits().size(), key_length_required(policy.m_max, policy.n_d));
    EXPECT_EQ(card.key_c.bits().provenance(), Provenance::key_c);
    EXPECT_EQ(terminal.ledger.phase(), Phase::closed);
    EXPECT_FALSE(record().session_open);
}

TEST_F(CardProtocol, MitmDuringRefreshKeepsOldKey) {
    ASSERT_EQ(authenticate(card, 41).status, AuthStatus::authenticated);
    run_transaction(card, terminal, std::vector<std::uint8_t>(8, 0));
    const BitString old_c = card.key_c.bits();
    ExchangeOptions opt;
    opt.channel = mitm_channel();
    const auto r = refresh_key_c(card, terminal, server, cfg, 41, opt);
    EXPECT_FALSE(r.replaced);
    EXPECT_EQ(card.key_c.bits(), old_c);
    EXPECT_EQ(record().key_c.bits(), old_c);
    EXPECT_EQ(record().broken_count_mirror, 0u);
    EXPECT_EQ(terminal.ledger.phase(), Phase::closed);
    // The aborted session still burned its segment.
    EXPECT_EQ(card.key_c.cursor(), 1u);
}

TEST_F(CardProtocol, RefreshRequiresRefreshingPhase) {
    EXPECT_THROW(refresh_key_c(card, terminal, server, cfg, 1), ProtocolError);
}

// =============================================================================
// Lifetime properties
// =============================================================================

TEST_F(CardProtocol, LifetimeAuditWithMixedFaults) {
    std::set<SegmentUse> used;
    std::size_t last_broken = 0;
    bool was_canceled = false;
    Rng fault = make_rng(8);
    for (std::size_t s = 0; s < 30; ++s) {
        const Seed seed = 1000 + s;
        const bool attack = fault() % 4 == 0;
        Card clone = clone_of(card, seed);
        Card& who = attack ? clone : card;
        const auto r = authenticate(who, seed);
        if (r.segment) {
            EXPECT_TRUE(used.insert(*r.segment).second) << "segment reused";
        }
        if (r.status == AuthStatus::authenticated) {
            run_transaction(who, terminal, std::vector<std::uint8_t>(16, 1));
            refresh_key_c(who, terminal, server, cfg, seed);
        }
        if (r.status != AuthStatus::broken && r.status != AuthStatus::refused) {
            EXPECT_EQ(card.key_c.bits(), record().key_c.bits());
        }
        EXPECT_GE(record().broken_count_mirror, last_broken);
        EXPECT_TRUE(!was_canceled || record().canceled);
        EXPECT_EQ(record().canceled, record().broken_count_mirror >= policy.m_max);
        last_broken = record().broken_count_mirror;
        was_canceled = record().canceled;
    }
}

TEST_F(CardProtocol, SegmentIndexFollowsServer) {
    // A clone burns segment 0 at the server; the genuine card skips past it.
    Card clone = clone_of(card, 5);
    authenticate(clone, 1);
    const auto r = authenticate(card, 2);
    EXPECT_EQ(r.status, AuthStatus::authenticated);
    EXPECT_EQ(card.key_c.cursor(), 2u);
}

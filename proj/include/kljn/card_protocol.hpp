#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kljn/bitstring.hpp"
#include "kljn/kljn_exchange.hpp"
#include "kljn/noise_physics.hpp"
#include "kljn/rng.hpp"
#include "kljn/tag_hash.hpp"

namespace kljn {

class Keystore;

/// Public card identification data.
struct CardIdentity {
    std::string card_number;
    std::string holder_name;
    int expiry_month = 1;
    int expiry_year = 2000;

    /// "MM/YYYY".
    std::string expiry() const;
    static CardIdentity with_expiry(std::string card_number, std::string holder_name,
                                    std::string_view mm_yyyy);
};

/// ceil(m * log2(n_d)): authentication-key bits needed to tag m sessions
/// whose monitoring data are n_d samples long. Requires m >= 1, n_d >= 2.
std::size_t key_length_required(std::size_t m, std::size_t n_d);

/// Sizing of key C for a card.
struct KeyPolicy {
    std::size_t m_max = 5;  // broken sessions that cancel the card
    std::size_t n_d = 2;    // monitor samples exchanged per session
    /// Lower bound on the per-session segment; sets the forgery bound of
    /// the 64-bit tag. Zero gives pure ceil(log2 n_d) segments.
    std::size_t min_segment_bits = 64;

    void validate() const;
    std::size_t segment_len() const;
    /// m_max * segment_len; never below key_length_required(m_max, n_d).
    std::size_t key_bits() const;
};

/// Monitor samples per session for a key B of key_b_bits bits, counting
/// voltage and current separately.
std::size_t default_monitor_length(const NoiseConfig& cfg, std::size_t key_b_bits);

/// A used (generation, segment index) pair.
struct SegmentUse {
    std::size_t generation = 0;
    std::size_t index = 0;
    friend bool operator==(const SegmentUse&, const SegmentUse&) = default;
    friend auto operator<=>(const SegmentUse&, const SegmentUse&) = default;
};

/// Authentication key: m_max segments, each used for exactly one session.
class KeyC {
public:
    KeyC() = default;
    KeyC(BitString bits, std::size_t segment_len, std::size_t m_max, std::size_t generation = 0,
         std::size_t cursor = 0);

    const BitString& bits() const noexcept { return bits_; }
    std::size_t segment_len() const noexcept { return segment_len_; }
    std::size_t m_max() const noexcept { return m_max_; }
    std::size_t cursor() const noexcept { return cursor_; }
    std::size_t generation() const noexcept { return generation_; }
    std::size_t segments_left() const noexcept { return m_max_ - cursor_; }

    /// Burns segment `index` and everything before it. Throws ProtocolError
    /// if the index was already passed or lies beyond m_max.
    BitString consume_segment(std::size_t index);

    void zeroize() noexcept;

private:
    BitString bits_;
    std::size_t segment_len_ = 0;
    std::size_t m_max_ = 0;
    std::size_t generation_ = 0;
    std::size_t cursor_ = 0;
};

/// One-time-pad key: every bit is handed out at most once, then deleted.
class KeyB {
public:
    explicit KeyB(BitString bits);

    std::size_t size() const noexcept { return size_; }
    std::size_t consumed_offset() const noexcept { return offset_; }
    std::size_t remaining() const noexcept { return deleted_ ? 0 : size_ - offset_; }
    bool deleted() const noexcept { return deleted_; }

    /// Next n unused bits. Throws ProtocolError once deleted and
    /// KeyExhaustedError when fewer than n bits remain.
    BitString take(std::size_t n);

    void zeroize() noexcept;

private:
    BitString bits_;
    std::size_t size_ = 0;
    std::size_t offset_ = 0;
    bool deleted_ = false;
};

enum class Phase {
    idle,
    identified,
    key_located,
    kljn_running,
    authenticated,
    transacting,
    refreshing,
    closed,
    broken,
};

std::string_view to_string(Phase p) noexcept;

/// Legal successor phases. Refusals close the session from identified or
/// key_located; a refresh abort closes it from refreshing.
bool phase_transition_allowed(Phase from, Phase to) noexcept;

/// Per-session state machine and transcript.
class SessionLedger {
public:
    Phase phase() const noexcept { return phase_; }
    /// Throws ProtocolError on an illegal transition.
    void advance(Phase next, std::string note = {});
    void log(std::string message);

    const std::vector<std::string>& transcript() const noexcept { return transcript_; }

    std::size_t broken_count = 0;
    bool canceled = false;
    std::optional<SegmentUse> segment;

private:
    Phase phase_ = Phase::idle;
    std::vector<std::string> transcript_;
};

struct Card {
    CardIdentity identity;
    KeyC key_c;
    std::optional<KeyB> key_b;  // empty after fabrication
    std::size_t broken_count = 0;
    bool canceled = false;
    std::vector<SegmentUse> segment_log;
};

struct Terminal {
    std::optional<KeyC> key_c;  // session copy received from the server
    std::optional<KeyB> key_b;
    SessionLedger ledger;

    /// Fresh ledger and wiped key copies.
    void reset();
};

struct ServerRecord {
    CardIdentity identity;
    KeyC key_c;
    std::size_t broken_count_mirror = 0;
    bool canceled = false;
    bool session_open = false;
    std::vector<SegmentUse> segment_log;
};

/// Card-issuer back end. Every state change is journaled when a keystore is
/// attached.
class Server {
public:
    Server() = default;
    explicit Server(Keystore* journal) : journal_(journal) {}

    /// Registers a new card. Throws ProtocolError on a duplicate number.
    ServerRecord& enroll(ServerRecord record);
    /// Inserts or replaces a record without journaling (journal replay).
    void restore(ServerRecord record);
    ServerRecord* find(const std::string& card_number);
    const ServerRecord* find(const std::string& card_number) const;
    const std::map<std::string, ServerRecord>& records() const noexcept { return records_; }

    /// Writes the record to the journal, if any.
    void persist(const ServerRecord& record);

    std::mutex& mutex() noexcept { return mutex_; }

private:
    std::map<std::string, ServerRecord> records_;
    Keystore* journal_ = nullptr;
    std::mutex mutex_;
};

/// Fabrication: draws key C from `rng`, stores identical copies on the card
/// and the server, leaves key B empty.
Card initialize_card(const CardIdentity& identity, const KeyPolicy& policy, Rng& rng,
                     Server& server);

enum class AuthStatus { authenticated, broken, refused };

std::string_view to_string(AuthStatus s) noexcept;

struct AuthResult {
    AuthStatus status = AuthStatus::refused;
    std::string reason;
    std::optional<SegmentUse> segment;
    ExchangeStats stats;
    Tag card_tag = 0;
    Tag terminal_tag = 0;
};

struct SessionOptions {
    /// Key B is sized to twice this payload.
    std::size_t expected_payload_bytes = 16;
    /// Wire model and monitor settings for the authentication exchange.
    ExchangeOptions exchange;

    std::size_t key_b_bits() const noexcept { return 2 * 8 * expected_payload_bytes; }
};

/**
 * Identification, key lookup, KLJN exchange of key B, and cross-checking of
 * the tagged monitor data. The card acts as Alice, the terminal as Bob.
 *
 * The segment is burned on every side once lookup succeeds, whatever the
 * outcome. A tag mismatch or a physics alarm breaks the session and counts
 * towards cancellation. Unknown or canceled cards and exhausted keys are
 * refused without consuming a segment.
 */
AuthResult authenticate_session(Card& card, Terminal& terminal, Server& server,
                                const NoiseConfig& cfg, Seed seed,
                                const SessionOptions& options = {});

struct TransactionResult {
    std::vector<std::uint8_t> ciphertext;
    std::vector<std::uint8_t> decrypted;
    bool verified = false;
    std::size_t key_bits_used = 0;
};

/// One-time-pad encrypted exchange of `payload` from card to terminal with
/// key B; both copies of key B are deleted afterwards, even on failure.
TransactionResult run_transaction(Card& card, Terminal& terminal,
                                  std::span<const std::uint8_t> payload);

struct RefreshResult {
    bool replaced = false;
    std::string reason;
    ExchangeStats stats;
};

/**
 * Exchanges 8 * |C| raw bits, amplifies them down to |C| and installs the
 * result as the next generation of key C on card and server. An aborted
 * exchange keeps the old key and does not count as a broken session.
 */
RefreshResult refresh_key_c(Card& card, Terminal& terminal, Server& server,
                            const NoiseConfig& cfg, Seed seed,
                            const ExchangeOptions& exchange = {});

}  // namespace kljn

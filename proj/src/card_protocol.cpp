#include "kljn/card_protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <utility>

#include "kljn/errors.hpp"
#include "kljn/keystore.hpp"
#include "kljn/privacy_amplification.hpp"

namespace kljn {

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::size_t ceil_log2_product(std::size_t m, std::size_t n_d) {
    const double v = static_cast<double>(m) * std::log2(static_cast<double>(n_d));
    const double nearest = std::round(v);
    if (std::abs(v - nearest) < 1e-9) return static_cast<std::size_t>(nearest);
    return static_cast<std::size_t>(std::ceil(v));
}

}  // namespace

// ---------------------------------------------------------------------------
// Identity and sizing

std::string CardIdentity::expiry() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d/%04d", expiry_month, expiry_year);
    return buf;
}

CardIdentity CardIdentity::with_expiry(std::string card_number, std::string holder_name,
                                       std::string_view mm_yyyy) {
    CardIdentity id{std::move(card_number), std::move(holder_name), 0, 0};
    int month = 0;
    int year = 0;
    const std::string text(mm_yyyy);
    char tail = 0;
    if (std::sscanf(text.c_str(), "%d/%d%c", &month, &year, &tail) != 2 || month < 1 || month > 12)
        throw DomainError("CardIdentity: expiry must be MM/YYYY");
    id.expiry_month = month;
    id.expiry_year = year;
    return id;
}

std::size_t key_length_required(std::size_t m, std::size_t n_d) {
    if (m < 1) throw DomainError("key_length_required: m must be >= 1");
    if (n_d < 2) throw DomainError("key_length_required: n_d must be >= 2");
    return ceil_log2_product(m, n_d);
}

void KeyPolicy::validate() const {
    if (m_max < 1) throw ConfigError("key policy: m_max must be >= 1");
    if (n_d < 2) throw ConfigError("key policy: n_d must be >= 2");
}

std::size_t KeyPolicy::segment_len() const {
    validate();
    return std::max(key_length_required(1, n_d), min_segment_bits);
}

std::size_t KeyPolicy::key_bits() const { return m_max * segment_len(); }

std::size_t default_monitor_length(const NoiseConfig& cfg, std::size_t key_b_bits) {
    return 2 * cfg.samples_per_bit * key_b_bits;
}

// ---------------------------------------------------------------------------
// Keys

KeyC::KeyC(BitString bits, std::size_t segment_len, std::size_t m_max, std::size_t generation,
           std::size_t cursor)
    : bits_(std::move(bits)),
      segment_len_(segment_len),
      m_max_(m_max),
      generation_(generation),
      cursor_(cursor) {
    if (segment_len_ == 0 || m_max_ == 0) throw DomainError("KeyC: empty segment layout");
    if (bits_.size() < m_max_ * segment_len_)
        throw DomainError("KeyC: key shorter than m_max segments");
    if (cursor_ > m_max_) throw DomainError("KeyC: cursor beyond last segment");
}

BitString KeyC::consume_segment(std::size_t index) {
    if (index < cursor_)
        throw ProtocolError("KeyC: segment " + std::to_string(index) + " already consumed");
    if (index >= m_max_) throw ProtocolError("KeyC: no segment " + std::to_string(index));
    cursor_ = index + 1;
    return bits_.slice(index * segment_len_, segment_len_);
}

void KeyC::zeroize() noexcept {
    bits_.zeroize();
    cursor_ = m_max_;
}

KeyB::KeyB(BitString bits) : bits_(std::move(bits)), size_(bits_.size()) {}

BitString KeyB::take(std::size_t n) {
    if (deleted_) throw ProtocolError("KeyB: key has been deleted");
    if (n > size_ - offset_)
        throw KeyExhaustedError("KeyB: " + std::to_string(n) + " bits requested, " +
                                std::to_string(size_ - offset_) + " left");
    auto out = bits_.slice(offset_, n);
    offset_ += n;
    return out;
}

void KeyB::zeroize() noexcept {
    bits_.zeroize();
    deleted_ = true;
}

// ---------------------------------------------------------------------------
// Session state machine

std::string_view to_string(Phase p) noexcept {
    switch (p) {
        case Phase::idle: return "idle";
        case Phase::identified: return "identified";
        case Phase::key_located: return "key_located";
        case Phase::kljn_running: return "kljn_running";
        case Phase::authenticated: return "authenticated";
        case Phase::transacting: return "transacting";
        case Phase::refreshing: return "refreshing";
        case Phase::closed: return "closed";
        case Phase::broken: return "broken";
    }
    return "?";
}

bool phase_transition_allowed(Phase from, Phase to) noexcept {
    switch (from) {
        case Phase::idle: return to == Phase::identified;
        case Phase::identified: return to == Phase::key_located || to == Phase::closed;
        case Phase::key_located: return to == Phase::kljn_running || to == Phase::closed;
        case Phase::kljn_running: return to == Phase::authenticated || to == Phase::broken;
        case Phase::authenticated: return to == Phase::transacting || to == Phase::broken;
        case Phase::transacting: return to == Phase::refreshing;
        case Phase::refreshing: return to == Phase::closed;
        case Phase::closed:
        case Phase::broken: return false;
    }
    return false;
}

void SessionLedger::advance(Phase next, std::string note) {
    if (!phase_transition_allowed(phase_, next))
        throw ProtocolError("session: illegal transition " + std::string(to_string(phase_)) +
                            " -> " + std::string(to_string(next)));
    std::string entry = std::string(to_string(phase_)) + " -> " + std::string(to_string(next));
    if (!note.empty()) entry += ": " + note;
    transcript_.push_back(std::move(entry));
    phase_ = next;
}

void SessionLedger::log(std::string message) { transcript_.push_back(std::move(message)); }

void Terminal::reset() {
    if (key_c) key_c->zeroize();
    if (key_b) key_b->zeroize();
    key_c.reset();
    key_b.reset();
    ledger = SessionLedger{};
}

// ---------------------------------------------------------------------------
// Server

ServerRecord& Server::enroll(ServerRecord record) {
    std::scoped_lock lock(mutex_);
    const auto number = record.identity.card_number;
    if (number.empty()) throw ProtocolError("server: empty card number");
    if (records_.contains(number))
        throw ProtocolError("server: card number " + number + " already enrolled");
    auto& stored = records_.emplace(number, std::move(record)).first->second;
    if (journal_) journal_->append(stored);
    return stored;
}

void Server::restore(ServerRecord record) {
    std::scoped_lock lock(mutex_);
    auto number = record.identity.card_number;
    records_.insert_or_assign(std::move(number), std::move(record));
}

ServerRecord* Server::find(const std::string& card_number) {
    std::scoped_lock lock(mutex_);
    const auto it = records_.find(card_number);
    return it == records_.end() ? nullptr : &it->second;
}

const ServerRecord* Server::find(const std::string& card_number) const {
    const auto it = records_.find(card_number);
    return it == records_.end() ? nullptr : &it->second;
}

void Server::persist(const ServerRecord& record) {
    if (journal_) journal_->append(record);
}

// ---------------------------------------------------------------------------
// Protocol

std::string_view to_string(AuthStatus s) noexcept {
    switch (s) {
        case AuthStatus::authenticated: return "authenticated";
        case AuthStatus::broken: return "broken";
        case AuthStatus::refused: return "refused";
    }
    return "?";
}

Card initialize_card(const CardIdentity& identity, const KeyPolicy& policy, Rng& rng,
                     Server& server) {
    policy.validate();
    if (identity.card_number.empty()) throw DomainError("initialize_card: empty card number");

    std::vector<Bit> raw(policy.key_bits());
    for (auto& b : raw) b = static_cast<Bit>(rng() >> 63);
    BitString c(std::move(raw), Provenance::key_c);

    ServerRecord record;
    record.identity = identity;
    record.key_c = KeyC(c, policy.segment_len(), policy.m_max);
    server.enroll(std::move(record));

    Card card;
    card.identity = identity;
    card.key_c = KeyC(std::move(c), policy.segment_len(), policy.m_max);
    return card;
}

AuthResult authenticate_session(Card& card, Terminal& terminal, Server& server,
                                const NoiseConfig& cfg, Seed seed, const SessionOptions& options) {
    terminal.reset();
    SessionLedger& ledger = terminal.ledger;
    AuthResult result;

    auto refuse = [&](std::string why) {
        ledger.advance(Phase::closed, "refused: " + why);
        result.status = AuthStatus::refused;
        result.reason = std::move(why);
        return result;
    };

    ledger.advance(Phase::identified, "card -> terminal -> server: identity " +
                                          card.identity.card_number);
    if (card.canceled) return refuse("card canceled");

    ServerRecord* record = server.find(card.identity.card_number);
    if (!record) return refuse("unknown identity");
    ledger.broken_count = record->broken_count_mirror;
    ledger.canceled = record->canceled;
    if (record->canceled) return refuse("card canceled");
    if (record->session_open) return refuse("card busy");
    if (record->key_c.segments_left() == 0) return refuse("key C exhausted");

    const std::size_t index = record->key_c.cursor();
    if (index < card.key_c.cursor() || index >= card.key_c.m_max())
        return refuse("segment " + std::to_string(index) + " not usable by card");

    record->session_open = true;
    terminal.key_c = record->key_c;
    const SegmentUse use{record->key_c.generation(), index};
    ledger.segment = use;
    result.segment = use;
    ledger.advance(Phase::key_located, "server -> terminal: key C generation " +
                                           std::to_string(use.generation) + ", segment " +
                                           std::to_string(index));

    // The segment is spent on every side before any data is tagged.
    const BitString card_segment = card.key_c.consume_segment(index);
    const BitString terminal_segment = terminal.key_c->consume_segment(index);
    record->key_c.consume_segment(index);
    card.segment_log.push_back({card.key_c.generation(), index});
    record->segment_log.push_back(use);
    server.persist(*record);

    auto close_broken = [&](std::string why) {
        ++record->broken_count_mirror;
        ++card.broken_count;
        if (record->broken_count_mirror >= record->key_c.m_max()) record->canceled = true;
        if (card.broken_count >= card.key_c.m_max()) card.canceled = true;
        record->session_open = false;
        ledger.broken_count = record->broken_count_mirror;
        ledger.canceled = record->canceled;
        ledger.advance(Phase::broken, "attack recorded: " + why);
        server.persist(*record);
        if (terminal.key_c) terminal.key_c->zeroize();
        result.status = AuthStatus::broken;
        result.reason = std::move(why);
        return result;
    };

    ledger.advance(Phase::kljn_running, "card <-> terminal: KLJN exchange of " +
                                            std::to_string(options.key_b_bits()) + " bits");
    PolyTagger card_tagger(card_segment);
    PolyTagger terminal_tagger(terminal_segment);
    ExchangeOptions exchange = options.exchange;
    exchange.observer = [&, user = options.exchange.observer](std::size_t period,
                                                              const BitExchangeRecord& rec) {
        ++result.stats.periods_run;
        result.stats.alarms += rec.alarm;
        result.stats.anomalies += rec.anomaly;
        result.stats.retained += rec.retained;
        card_tagger.update_trace(rec.trace);
        terminal_tagger.update_trace(rec.bob_trace);
        if (user) user(period, rec);
    };

    KeyExchangeResult kx;
    try {
        kx = exchange_key(options.key_b_bits(), cfg, derive_seed(seed, Stream::exchange), exchange);
    } catch (const ChannelCompromisedError& e) {
        return close_broken(std::string("monitor alarm during exchange (") + e.what() + ")");
    }
    result.stats = kx.stats;
    result.card_tag = card_tagger.finish();
    result.terminal_tag = terminal_tagger.finish();
    ledger.log("card -> terminal: tag " + hex64(result.card_tag));
    ledger.log("terminal -> card: tag " + hex64(result.terminal_tag));

    if (result.card_tag != result.terminal_tag) return close_broken("authentication tag mismatch");

    card.key_b.emplace(kx.alice_key.relabeled(Provenance::key_b));
    terminal.key_b.emplace(kx.bob_key.relabeled(Provenance::key_b));
    ledger.advance(Phase::authenticated, "tags verified; key B of " +
                                             std::to_string(options.key_b_bits()) + " bits");
    result.status = AuthStatus::authenticated;
    return result;
}

TransactionResult run_transaction(Card& card, Terminal& terminal,
                                  std::span<const std::uint8_t> payload) {
    SessionLedger& ledger = terminal.ledger;
    if (ledger.phase() != Phase::authenticated)
        throw ProtocolError("run_transaction: session is " + std::string(to_string(ledger.phase())));
    if (!card.key_b || !terminal.key_b) throw ProtocolError("run_transaction: no key B");

    ledger.advance(Phase::transacting, "card -> terminal: " + std::to_string(payload.size()) +
                                           " encrypted bytes");
    auto wipe = [&] {
        card.key_b->zeroize();
        terminal.key_b->zeroize();
    };

    TransactionResult result;
    const std::size_t n_bits = 8 * payload.size();
    try {
        auto card_pad = card.key_b->take(n_bits).to_bytes();
        auto terminal_pad = terminal.key_b->take(n_bits).to_bytes();
        result.ciphertext.resize(payload.size());
        result.decrypted.resize(payload.size());
        for (std::size_t i = 0; i < payload.size(); ++i) {
            result.ciphertext[i] = payload[i] ^ card_pad[i];
            result.decrypted[i] = result.ciphertext[i] ^ terminal_pad[i];
        }
        secure_zero(card_pad.data(), card_pad.size());
        secure_zero(terminal_pad.data(), terminal_pad.size());
    } catch (const KeyExhaustedError&) {
        wipe();
        ledger.advance(Phase::refreshing, "transaction aborted: key B exhausted; key B deleted");
        throw;
    }
    result.verified = std::equal(payload.begin(), payload.end(), result.decrypted.begin());
    result.key_bits_used = n_bits;
    wipe();
    ledger.advance(Phase::refreshing, std::string("transaction ") +
                                          (result.verified ? "verified" : "FAILED") +
                                          "; key B deleted");
    return result;
}

RefreshResult refresh_key_c(Card& card, Terminal& terminal, Server& server,
                            const NoiseConfig& cfg, Seed seed, const ExchangeOptions& exchange) {
    SessionLedger& ledger = terminal.ledger;
    if (ledger.phase() != Phase::refreshing)
        throw ProtocolError("refresh_key_c: session is " + std::string(to_string(ledger.phase())));
    ServerRecord* record = server.find(card.identity.card_number);
    if (!record) throw ProtocolError("refresh_key_c: card not enrolled");

    RefreshResult result;
    const std::size_t n_c = record->key_c.bits().size();
    const std::size_t segment_len = record->key_c.segment_len();
    const std::size_t m_max = record->key_c.m_max();

    auto finish = [&](std::string note) {
        if (terminal.key_c) terminal.key_c->zeroize();
        terminal.key_c.reset();
        record->session_open = false;
        ledger.advance(Phase::closed, std::move(note));
        server.persist(*record);
    };

    ExchangeOptions counted = exchange;
    counted.observer = [&, user = exchange.observer](std::size_t period,
                                                     const BitExchangeRecord& rec) {
        ++result.stats.periods_run;
        result.stats.alarms += rec.alarm;
        result.stats.anomalies += rec.anomaly;
        result.stats.retained += rec.retained;
        if (user) user(period, rec);
    };

    KeyExchangeResult kx;
    try {
        kx = exchange_key(8 * n_c, cfg, derive_seed(seed, Stream::refresh), counted);
    } catch (const ChannelCompromisedError& e) {
        result.reason = e.what();
        finish(std::string("refresh aborted, key C kept: ") + e.what());
        return result;
    }
    result.stats = kx.stats;

    const std::size_t next = record->key_c.generation() + 1;
    auto card_c = amplify(kx.alice_key).relabeled(Provenance::key_c);
    auto server_c = amplify(kx.bob_key).relabeled(Provenance::key_c);

    card.key_c.zeroize();
    card.key_c = KeyC(std::move(card_c), segment_len, m_max, next);
    record->key_c.zeroize();
    record->key_c = KeyC(std::move(server_c), segment_len, m_max, next);

    result.replaced = true;
    finish("key C generation " + std::to_string(next) + " installed (" + std::to_string(n_c) +
           " bits from " + std::to_string(8 * n_c) + " raw)");
    return result;
}

}  // namespace kljn

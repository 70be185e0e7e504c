#include "kljn/cli_harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "kljn/adversary.hpp"
#include "kljn/card_protocol.hpp"
#include "kljn/errors.hpp"
#include "kljn/kljn_exchange.hpp"
#include "kljn/keystore.hpp"

namespace kljn::cli {

namespace {

constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Parsing helpers

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

double parse_double(std::string_view key, std::string_view text) {
    const std::string s = trim(text);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size())
        throw ConfigError("config: " + std::string(key) + " expects a number, got '" + s + "'");
    return v;
}

std::uint64_t parse_uint(std::string_view key, std::string_view text) {
    const std::string s = trim(text);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
        throw ConfigError("config: " + std::string(key) + " expects a non-negative integer, got '" +
                          s + "'");
    return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
    const std::string s = trim(text);
    if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "off" || s == "no") return false;
    throw ConfigError("config: " + std::string(key) + " expects on/off, got '" + s + "'");
}

// ---------------------------------------------------------------------------
// Records

Record header(std::string_view schema) {
    Record r;
    r["schema"] = schema;
    r["version"] = kSchemaVersion;
    return r;
}

void emit(std::ostream& out, const Record& r) { out << r.dump() << '\n'; }

template <class T>
nlohmann::json optional_json(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

// Runs body(i) for i in [0, n) on a worker pool and returns the results in
// index order.
template <class Body>
auto parallel_trials(std::size_t n, std::size_t threads, Body body)
    -> std::vector<decltype(body(std::size_t{}))> {
    using Result = decltype(body(std::size_t{}));
    std::vector<std::optional<Result>> slots(n);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                slots[i].emplace(body(i));
            } catch (...) {
                std::scoped_lock lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = n;
            }
        }
    };
    if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
    threads = std::min(threads, std::max<std::size_t>(n, 1));
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
        worker();
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<Result> results;
    results.reserve(n);
    for (auto& s : slots) results.push_back(std::move(*s));
    return results;
}

ExchangeParams exchange_params(const RunConfig& cfg) {
    ExchangeParams p;
    p.monitor_tolerance = cfg.monitor_tolerance;
    p.monitor_enabled = cfg.monitor_enabled;
    return p;
}

Seed trial_seed(const RunConfig& cfg, std::size_t trial) { return cfg.seed + trial; }

// Fresh Gaussian injection per bit period, drawn from the period seed.
LoopChannel random_injection_channel(double sigma) {
    return [sigma](const LoopInputs& in) {
        Rng rng = make_rng(derive_seed(in.seed, Stream::eve, 1));
        std::normal_distribution<double> normal(0.0, sigma);
        std::vector<double> injection(in.u_a.size());
        for (auto& x : injection) x = normal(rng);
        return injection_channel(std::move(injection))(in);
    };
}

LoopChannel adversary_channel(const RunConfig& cfg) {
    if (cfg.adversary == "mitm") return mitm_channel();
    if (cfg.adversary == "injection")
        return random_injection_channel(cfg.injection_rms * mid_loop_current_rms(cfg.noise));
    return {};
}

// Required fields per schema, besides schema and version.
const std::map<std::string, std::vector<std::string>>& schema_table() {
    static const std::map<std::string, std::vector<std::string>> table{
        {"kljn.exchange.trial",
         {"trial", "seed", "target_bits", "periods", "retained", "discard_fraction", "agreement",
          "disagreement_bits", "alarms", "anomalies", "aborted", "simulated_seconds"}},
        {"kljn.exchange.summary",
         {"trials", "target_bits", "periods", "retained", "discard_fraction", "agreement_rate",
          "alarms", "anomalies", "aborted"}},
        {"kljn.attack.trial",
         {"kind", "trial", "seed", "alice_bit", "bob_bit", "detected", "detection_sample_index",
          "bits_learned", "bits_retained_by_parties", "eve_guess_correct"}},
        {"kljn.attack.summary",
         {"kind", "trials", "detected", "detection_rate", "median_detection_index",
          "bits_retained_by_parties", "bits_learned", "eve_retained_trials",
          "eve_retained_accuracy"}},
        {"kljn.session",
         {"session", "fault", "status", "reason", "outcome", "phase", "segment_generation",
          "segment_index", "broken_count", "canceled", "key_c_generation", "key_b_bits",
          "transaction_verified", "keys_synchronized", "periods"}},
        {"kljn.lifetime.summary",
         {"sessions", "closed", "broken", "refused", "refresh_aborted", "canceled",
          "final_generation", "segment_reuse", "key_b_reuse", "keys_synchronized"}},
        {"kljn.rate",
         {"bandwidth", "sample_rate", "samples_per_bit", "key_bits", "periods", "retained_bits",
          "simulated_seconds", "rate_bits_per_second", "reference_rate_bits_per_second",
          "ratio_to_reference", "within_factor_4", "key_within_4_seconds"}},
        {"kljn.keystore.entry",
         {"card_number", "holder_name", "expiry", "c_bits", "segment_len", "m_max", "cursor",
          "broken_count", "canceled", "generation"}},
    };
    return table;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void RunConfig::finalize() {
    if (!sample_rate_set) noise.sample_rate = 2.0 * noise.bandwidth;
    noise.validate();
    if (trials == 0) throw ConfigError("config: trials must be >= 1");
    if (target_bits == 0) throw ConfigError("config: target_bits must be >= 1");
    if (m_max == 0) throw ConfigError("config: m_max must be >= 1");
    if (n_d == 1) throw ConfigError("config: n_d must be >= 2 (or 0 for the default)");
    if (!(monitor_tolerance > 0.0)) throw ConfigError("config: monitor_tolerance must be > 0");
    if (!(injection_rms >= 0.0)) throw ConfigError("config: injection_rms must be >= 0");
    if (adversary != "none" && adversary != "mitm" && adversary != "injection")
        throw ConfigError("config: adversary must be none, mitm or injection");
}

std::size_t RunConfig::effective_n_d() const {
    return n_d != 0 ? n_d : default_monitor_length(noise, 2 * 8 * payload_bytes);
}

const std::vector<std::string>& setting_names() {
    static const std::vector<std::string> names{
        "r_low",         "r_high",           "t_eff",        "boltzmann_k",
        "bandwidth",     "sample_rate",      "samples_per_bit", "classify_margin",
        "m_max",         "n_d",              "min_segment_bits", "trials",
        "seed",          "output",           "target_bits",  "payload_bytes",
        "monitor_tolerance", "monitor",      "injection_rms", "threads",
        "card_number",   "holder_name",      "expiry",       "adversary",
    };
    return names;
}

void apply_setting(RunConfig& cfg, std::string_view raw_key, std::string_view value) {
    std::string key = trim(raw_key);
    std::replace(key.begin(), key.end(), '-', '_');
    auto& n = cfg.noise;
    if (key == "r_low") n.r_low = parse_double(key, value);
    else if (key == "r_high") n.r_high = parse_double(key, value);
    else if (key == "t_eff") n.t_eff = parse_double(key, value);
    else if (key == "boltzmann_k") n.boltzmann_k = parse_double(key, value);
    else if (key == "bandwidth") n.bandwidth = parse_double(key, value);
    else if (key == "sample_rate") {
        n.sample_rate = parse_double(key, value);
        cfg.sample_rate_set = true;
    } else if (key == "samples_per_bit") n.samples_per_bit = parse_uint(key, value);
    else if (key == "classify_margin") n.classify_margin = parse_double(key, value);
    else if (key == "m_max") cfg.m_max = parse_uint(key, value);
    else if (key == "n_d") cfg.n_d = parse_uint(key, value);
    else if (key == "min_segment_bits") cfg.min_segment_bits = parse_uint(key, value);
    else if (key == "trials") cfg.trials = parse_uint(key, value);
    else if (key == "seed") cfg.seed = parse_uint(key, value);
    else if (key == "output") cfg.output_path = trim(value);
    else if (key == "target_bits") cfg.target_bits = parse_uint(key, value);
    else if (key == "payload_bytes") cfg.payload_bytes = parse_uint(key, value);
    else if (key == "monitor_tolerance") cfg.monitor_tolerance = parse_double(key, value);
    else if (key == "monitor") cfg.monitor_enabled = parse_bool(key, value);
    else if (key == "injection_rms") cfg.injection_rms = parse_double(key, value);
    else if (key == "threads") cfg.threads = parse_uint(key, value);
    else if (key == "card_number") cfg.card_number = trim(value);
    else if (key == "holder_name") cfg.holder_name = trim(value);
    else if (key == "expiry") cfg.expiry = trim(value);
    else if (key == "adversary") cfg.adversary = trim(value);
    else throw ConfigError("config: unknown key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        apply_setting(cfg, std::string_view(line).substr(0, eq),
                      std::string_view(line).substr(eq + 1));
    }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    apply_config_text(cfg, buf.str());
}

std::string_view to_string(Fault f) noexcept {
    switch (f) {
        case Fault::none: return "none";
        case Fault::wrong_key: return "wrong-key";
        case Fault::mitm_auth: return "mitm-auth";
        case Fault::mitm_refresh: return "mitm-refresh";
    }
    return "?";
}

std::map<std::size_t, Fault> parse_fault_script(std::string_view text) {
    std::map<std::size_t, Fault> faults;
    std::string normalized(text);
    for (auto& c : normalized)
        if (c == ',' || c == ';') c = '\n';
    std::istringstream in(normalized);
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        for (auto& c : line)
            if (c == ':' || c == '=') c = ' ';
        std::istringstream fields(line);
        std::string session;
        std::string kind;
        if (!(fields >> session >> kind))
            throw ConfigError("fault script: expected '<session> <kind>', got '" + line + "'");
        const auto index = parse_uint("fault session", session);
        if (index == 0) throw ConfigError("fault script: sessions are numbered from 1");
        Fault f;
        if (kind == "wrong-key") f = Fault::wrong_key;
        else if (kind == "mitm-auth") f = Fault::mitm_auth;
        else if (kind == "mitm-refresh") f = Fault::mitm_refresh;
        else if (kind == "none") f = Fault::none;
        else throw ConfigError("fault script: unknown fault '" + kind + "'");
        faults[index] = f;
    }
    return faults;
}

// ---------------------------------------------------------------------------
// exchange

int cmd_exchange(const RunConfig& cfg, std::ostream& out) {
    struct Trial {
        Record record;
        ExchangeStats stats;
        bool agreement = false;
        bool aborted = false;
    };
    ExchangeOptions options;
    options.params = exchange_params(cfg);
    options.channel = adversary_channel(cfg);

    auto trials = parallel_trials(cfg.trials, cfg.threads, [&](std::size_t t) {
        Trial trial;
        const Seed seed = trial_seed(cfg, t);
        std::size_t disagreement = 0;
        try {
            const auto kx = exchange_key(cfg.target_bits, cfg.noise, seed, options);
            trial.stats = kx.stats;
            for (std::size_t i = 0; i < kx.alice_key.size(); ++i)
                disagreement += kx.alice_key[i] != kx.bob_key[i];
            trial.agreement = disagreement == 0 && kx.alice_key.size() == kx.bob_key.size();
        } catch (const ChannelCompromisedError&) {
            trial.aborted = true;
        }
        auto& r = trial.record;
        r = header("kljn.exchange.trial");
        r["trial"] = t;
        r["seed"] = seed;
        r["target_bits"] = cfg.target_bits;
        r["periods"] = trial.stats.periods_run;
        r["retained"] = trial.stats.retained;
        r["discard_fraction"] = trial.stats.discard_fraction;
        r["agreement"] = trial.agreement;
        r["disagreement_bits"] = disagreement;
        r["alarms"] = trial.stats.alarms;
        r["anomalies"] = trial.stats.anomalies;
        r["aborted"] = trial.aborted;
        r["simulated_seconds"] = trial.stats.simulated_seconds(cfg.noise);
        return trial;
    });

    std::size_t periods = 0, retained = 0, alarms = 0, anomalies = 0, agreed = 0, aborted = 0;
    for (const auto& t : trials) {
        emit(out, t.record);
        periods += t.stats.periods_run;
        retained += t.stats.retained;
        alarms += t.stats.alarms;
        anomalies += t.stats.anomalies;
        agreed += t.agreement;
        aborted += t.aborted;
    }
    auto s = header("kljn.exchange.summary");
    s["trials"] = cfg.trials;
    s["target_bits"] = cfg.target_bits;
    s["periods"] = periods;
    s["retained"] = retained;
    s["discard_fraction"] =
        periods ? 1.0 - static_cast<double>(retained) / static_cast<double>(periods) : 0.0;
    s["agreement_rate"] = static_cast<double>(agreed) / static_cast<double>(cfg.trials);
    s["alarms"] = alarms;
    s["anomalies"] = anomalies;
    s["aborted"] = aborted;
    emit(out, s);
    return aborted ? kExitSecurityAbort : kExitOk;
}

// ---------------------------------------------------------------------------
// attack

int cmd_attack(std::string_view kind_text, const RunConfig& cfg, std::ostream& out) {
    AttackKind kind;
    if (kind_text == "passive") kind = AttackKind::passive;
    else if (kind_text == "mitm") kind = AttackKind::mitm;
    else if (kind_text == "injection") kind = AttackKind::injection;
    else throw ConfigError("attack: unknown kind '" + std::string(kind_text) +
                           "' (expected passive, mitm or injection)");

    struct Trial {
        Record record;
        AttackOutcome outcome;
        std::optional<LoopClass> true_class;
        std::optional<EveEstimate> eve;
    };
    AttackOptions options;
    options.params = exchange_params(cfg);
    const double injection_sigma = cfg.injection_rms * mid_loop_current_rms(cfg.noise);

    auto trials = parallel_trials(cfg.trials, cfg.threads, [&](std::size_t t) {
        Trial trial;
        const Seed seed = trial_seed(cfg, t);
        auto& o = trial.outcome;
        auto& r = trial.record;
        r = header("kljn.attack.trial");
        r["kind"] = to_string(kind);
        r["trial"] = t;
        r["seed"] = seed;

        switch (kind) {
            case AttackKind::passive: {
                Rng alice = make_rng(derive_seed(seed, Stream::alice_bits));
                Rng bob = make_rng(derive_seed(seed, Stream::bob_bits));
                const Bit a = static_cast<Bit>(alice() >> 63);
                const Bit b = static_cast<Bit>(bob() >> 63);
                const auto rec = run_bit_period(a, b, cfg.noise, seed, {}, options.params);
                o.kind = AttackKind::passive;
                o.alice_bit = a;
                o.bob_bit = b;
                o.bits_retained_by_parties = rec.retained ? 1 : 0;
                trial.true_class = rec.loop_class;
                try {
                    auto eve = passive_eavesdrop(rec.trace, cfg.noise, seed);
                    eve.correct_assignment = eve.bit_assignment_guess &&
                                             *eve.bit_assignment_guess == std::pair<Bit, Bit>{a, b};
                    if (rec.retained) o.eve_guess_correct = eve.correct_assignment;
                    trial.eve = eve;
                } catch (const Error&) {
                    if (rec.retained) o.eve_guess_correct = false;
                }
                r["loop_class"] = rec.loop_class ? nlohmann::json(to_string(*rec.loop_class))
                                                 : nlohmann::json(nullptr);
                r["retained"] = rec.retained;
                if (trial.eve) {
                    r["eve_class"] = to_string(trial.eve->loop_class_guess);
                    r["eve_pair"] = {trial.eve->pair_guess.lower, trial.eve->pair_guess.upper};
                    r["eve_correct_assignment"] = trial.eve->correct_assignment;
                } else {
                    r["eve_class"] = nullptr;
                    r["eve_pair"] = nullptr;
                    r["eve_correct_assignment"] = false;
                }
                break;
            }
            case AttackKind::mitm:
                o = mitm_attack(cfg.noise, seed, options);
                break;
            case AttackKind::injection: {
                std::vector<double> injection(cfg.noise.samples_per_bit, 0.0);
                if (injection_sigma > 0.0) {
                    Rng rng = make_rng(derive_seed(seed, Stream::eve, 1));
                    std::normal_distribution<double> normal(0.0, injection_sigma);
                    for (auto& x : injection) x = normal(rng);
                }
                o = inject_current(cfg.noise, injection, seed, options);
                r["injection_rms"] = cfg.injection_rms;
                break;
            }
        }
        r["alice_bit"] = o.alice_bit;
        r["bob_bit"] = o.bob_bit;
        r["detected"] = o.detected;
        r["detection_sample_index"] = optional_json(o.detection_sample_index);
        r["bits_learned"] = o.bits_learned;
        r["bits_retained_by_parties"] = o.bits_retained_by_parties;
        r["eve_guess_correct"] = optional_json(o.eve_guess_correct);
        return trial;
    });

    std::size_t detected = 0, retained = 0, learned = 0, eve_trials = 0, eve_correct = 0;
    std::size_t discarded_trials = 0, discarded_correct = 0, mid_pairs = 0;
    double pair_lo = 0.0, pair_hi = 0.0;
    std::vector<std::size_t> indices;
    for (const auto& t : trials) {
        emit(out, t.record);
        const auto& o = t.outcome;
        detected += o.detected;
        if (o.detection_sample_index) indices.push_back(*o.detection_sample_index);
        retained += o.bits_retained_by_parties;
        learned += o.bits_learned;
        if (o.eve_guess_correct) {
            ++eve_trials;
            eve_correct += *o.eve_guess_correct;
        }
        if (t.eve && t.true_class && *t.true_class != LoopClass::MID) {
            ++discarded_trials;
            discarded_correct += t.eve->correct_assignment;
        }
        if (t.eve && t.eve->loop_class_guess == LoopClass::MID) {
            ++mid_pairs;
            pair_lo += t.eve->pair_guess.lower;
            pair_hi += t.eve->pair_guess.upper;
        }
    }
    std::optional<double> median;
    if (!indices.empty()) {
        std::sort(indices.begin(), indices.end());
        const auto m = indices.size() / 2;
        median = indices.size() % 2 ? static_cast<double>(indices[m])
                                    : 0.5 * static_cast<double>(indices[m - 1] + indices[m]);
    }

    auto s = header("kljn.attack.summary");
    s["kind"] = to_string(kind);
    s["trials"] = cfg.trials;
    s["detected"] = detected;
    s["detection_rate"] = static_cast<double>(detected) / static_cast<double>(cfg.trials);
    s["median_detection_index"] = optional_json(median);
    s["bits_retained_by_parties"] = retained;
    s["bits_learned"] = learned;
    s["eve_retained_trials"] = eve_trials;
    s["eve_retained_accuracy"] =
        eve_trials ? nlohmann::json(static_cast<double>(eve_correct) / static_cast<double>(eve_trials))
                   : nlohmann::json(nullptr);
    if (kind == AttackKind::passive) {
        s["eve_discarded_trials"] = discarded_trials;
        s["eve_discarded_accuracy"] =
            discarded_trials ? nlohmann::json(static_cast<double>(discarded_correct) /
                                              static_cast<double>(discarded_trials))
                             : nlohmann::json(nullptr);
        s["eve_mean_pair"] = mid_pairs ? nlohmann::json({pair_lo / static_cast<double>(mid_pairs),
                                                         pair_hi / static_cast<double>(mid_pairs)})
                                       : nlohmann::json(nullptr);
    }
    if (kind == AttackKind::injection) s["injection_rms"] = cfg.injection_rms;
    s["monitor"] = cfg.monitor_enabled;
    emit(out, s);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// card-lifetime

int cmd_card_lifetime(const RunConfig& cfg, std::size_t n_sessions,
                      const std::map<std::size_t, Fault>& faults,
                      const std::optional<std::string>& keystore_path, std::ostream& out) {
    std::optional<Keystore> keystore;
    if (keystore_path) keystore.emplace(*keystore_path);
    Server server(keystore ? &*keystore : nullptr);
    if (keystore) restore_server(server, *keystore);

    KeyPolicy policy;
    policy.m_max = cfg.m_max;
    policy.n_d = cfg.effective_n_d();
    policy.min_segment_bits = cfg.min_segment_bits;

    const auto identity = CardIdentity::with_expiry(cfg.card_number, cfg.holder_name, cfg.expiry);
    // Only the server side is journaled, so a lifetime cannot resume an old card.
    if (server.find(identity.card_number))
        throw ConfigError("card-lifetime: card " + identity.card_number +
                          " is already in the keystore; pick another card_number");
    Rng fab = make_rng(derive_seed(cfg.seed, Stream::card));
    Card card = initialize_card(identity, policy, fab, server);
    Terminal terminal;

    SessionOptions session_options;
    session_options.expected_payload_bytes = cfg.payload_bytes;
    session_options.exchange.params = exchange_params(cfg);
    ExchangeOptions refresh_options;
    refresh_options.params = exchange_params(cfg);

    std::size_t closed = 0, broken = 0, refused = 0, refresh_aborted = 0;
    bool key_b_reuse = false;
    bool always_synced = true;

    for (std::size_t session = 1; session <= n_sessions; ++session) {
        const auto fit = faults.find(session);
        const Fault fault = fit == faults.end() ? Fault::none : fit->second;
        const Seed seed = derive_seed(cfg.seed, Stream::card, session);

        Card clone;
        Card* actor = &card;
        if (fault == Fault::wrong_key) {
            // Public identity copied, key C guessed.
            Rng guess = make_rng(derive_seed(seed, Stream::eve));
            std::vector<Bit> bits(card.key_c.bits().size());
            for (auto& b : bits) b = static_cast<Bit>(guess() >> 63);
            clone.identity = card.identity;
            clone.key_c = KeyC(BitString(std::move(bits), Provenance::key_c),
                               card.key_c.segment_len(), card.key_c.m_max(),
                               card.key_c.generation());
            actor = &clone;
        }

        SessionOptions so = session_options;
        if (fault == Fault::mitm_auth) so.exchange.channel = mitm_channel();
        const auto auth = authenticate_session(*actor, terminal, server, cfg.noise, seed, so);

        std::string outcome = std::string(to_string(auth.status));
        std::optional<bool> verified;
        std::size_t periods = auth.stats.periods_run;
        if (auth.status == AuthStatus::authenticated) {
            if (!actor->key_b || actor->key_b->consumed_offset() != 0 || actor->key_b->deleted())
                key_b_reuse = true;
            Rng payload_rng = make_rng(derive_seed(seed, Stream::transaction));
            std::vector<std::uint8_t> payload(cfg.payload_bytes);
            for (std::size_t i = 0; i < payload.size(); ++i)
                payload[i] = i < 4 ? static_cast<std::uint8_t>('0' + payload_rng() % 10)
                                   : static_cast<std::uint8_t>(payload_rng() & 0xFF);
            const auto tx = run_transaction(*actor, terminal, payload);
            verified = tx.verified;
            if (!actor->key_b->deleted() || !terminal.key_b->deleted()) key_b_reuse = true;

            ExchangeOptions ro = refresh_options;
            if (fault == Fault::mitm_refresh) ro.channel = mitm_channel();
            const auto refresh = refresh_key_c(*actor, terminal, server, cfg.noise, seed, ro);
            periods += refresh.stats.periods_run;
            outcome = refresh.replaced ? "closed" : "refresh_aborted";
        }
        if (outcome == "closed") ++closed;
        else if (outcome == "broken") ++broken;
        else if (outcome == "refused") ++refused;
        else ++refresh_aborted;

        const ServerRecord* record = server.find(identity.card_number);
        const bool synced = record && record->key_c.bits() == card.key_c.bits() &&
                            record->key_c.generation() == card.key_c.generation();
        if (auth.status != AuthStatus::broken && auth.status != AuthStatus::refused && !synced)
            always_synced = false;

        auto r = header("kljn.session");
        r["session"] = session;
        r["fault"] = to_string(fault);
        r["status"] = to_string(auth.status);
        r["reason"] = auth.reason;
        r["outcome"] = outcome;
        r["phase"] = to_string(terminal.ledger.phase());
        r["segment_generation"] =
            auth.segment ? nlohmann::json(auth.segment->generation) : nlohmann::json(nullptr);
        r["segment_index"] =
            auth.segment ? nlohmann::json(auth.segment->index) : nlohmann::json(nullptr);
        r["broken_count"] = record ? record->broken_count_mirror : 0;
        r["canceled"] = record ? record->canceled : false;
        r["key_c_generation"] = card.key_c.generation();
        r["key_b_bits"] = so.key_b_bits();
        r["transaction_verified"] = optional_json(verified);
        r["keys_synchronized"] = synced;
        r["periods"] = periods;
        emit(out, r);
    }

    const ServerRecord* record = server.find(identity.card_number);
    std::vector<SegmentUse> uses = record->segment_log;
    std::sort(uses.begin(), uses.end());
    const bool segment_reuse = std::adjacent_find(uses.begin(), uses.end()) != uses.end();

    auto s = header("kljn.lifetime.summary");
    s["sessions"] = n_sessions;
    s["closed"] = closed;
    s["broken"] = broken;
    s["refused"] = refused;
    s["refresh_aborted"] = refresh_aborted;
    s["canceled"] = record->canceled;
    s["final_generation"] = record->key_c.generation();
    s["segment_reuse"] = segment_reuse;
    s["key_b_reuse"] = key_b_reuse;
    s["keys_synchronized"] = always_synced;
    s["key_c_bits"] = record->key_c.bits().size();
    s["segment_len"] = record->key_c.segment_len();
    s["n_d"] = policy.n_d;
    emit(out, s);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// rate

int cmd_rate(const RunConfig& cfg, std::size_t key_bits, std::ostream& out) {
    if (key_bits == 0) throw ConfigError("rate: key_bits must be >= 1");
    ExchangeOptions options;
    options.params = exchange_params(cfg);
    const auto kx = exchange_key(key_bits, cfg.noise, cfg.seed, options);
    const double seconds = kx.stats.simulated_seconds(cfg.noise);
    const double rate = static_cast<double>(kx.stats.retained) / seconds;
    constexpr double kReference = 1000.0;

    auto r = header("kljn.rate");
    r["bandwidth"] = cfg.noise.bandwidth;
    r["sample_rate"] = cfg.noise.sample_rate;
    r["samples_per_bit"] = cfg.noise.samples_per_bit;
    r["key_bits"] = key_bits;
    r["periods"] = kx.stats.periods_run;
    r["retained_bits"] = kx.stats.retained;
    r["simulated_seconds"] = seconds;
    r["rate_bits_per_second"] = rate;
    r["reference_rate_bits_per_second"] = kReference;
    r["ratio_to_reference"] = rate / kReference;
    r["within_factor_4"] = rate >= kReference / 4.0 && rate <= kReference * 4.0;
    r["key_within_4_seconds"] = seconds <= 4.0;
    emit(out, r);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// keystore-inspect

int cmd_keystore_inspect(const std::string& keystore_path, bool reveal, std::ostream& out) {
    std::error_code ec;
    if (!std::filesystem::exists(keystore_path, ec))
        throw IoError("keystore " + keystore_path + " does not exist");
    const Keystore keystore(keystore_path);
    for (const auto& [number, rec] : keystore.load()) {
        auto r = header("kljn.keystore.entry");
        r["card_number"] = number;
        r["holder_name"] = rec.identity.holder_name;
        r["expiry"] = rec.identity.expiry();
        r["c_bits"] = rec.key_c.bits().size();
        if (reveal) r["c_hex"] = rec.key_c.bits().to_hex();
        r["segment_len"] = rec.key_c.segment_len();
        r["m_max"] = rec.key_c.m_max();
        r["cursor"] = rec.key_c.cursor();
        r["broken_count"] = rec.broken_count_mirror;
        r["canceled"] = rec.canceled;
        r["generation"] = rec.key_c.generation();
        emit(out, r);
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Schema check

std::optional<std::string> validate_record(const nlohmann::json& record) {
    if (!record.is_object()) return "record is not an object";
    if (!record.contains("schema") || !record["schema"].is_string()) return "missing schema";
    if (!record.contains("version") || !record["version"].is_number_integer())
        return "missing version";
    const auto schema = record["schema"].get<std::string>();
    const auto& table = schema_table();
    const auto it = table.find(schema);
    if (it == table.end()) return "unknown schema '" + schema + "'";
    if (record["version"].get<int>() != kSchemaVersion)
        return "unsupported version for " + schema;
    for (const auto& field : it->second)
        if (!record.contains(field)) return schema + ": missing field '" + field + "'";
    return std::nullopt;
}

std::size_t check_record_stream(std::istream& in, std::ostream& err) {
    std::size_t bad = 0;
    std::size_t lineno = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::optional<std::string> problem;
        try {
            problem = validate_record(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            problem = std::string("not JSON: ") + e.what();
        }
        if (problem) {
            ++bad;
            err << "line " << lineno << ": " << *problem << '\n';
        }
    }
    return bad;
}

// ---------------------------------------------------------------------------
// Entry point

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"KLJN key exchange and card protocol simulator"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::map<std::string, std::string> overrides;
    app.add_option("--config", config_path, "key = value configuration file");
    for (const auto& name : setting_names()) {
        std::string flags = "--" + name;
        if (name.find('_') != std::string::npos) {
            std::string dashed = name;
            std::replace(dashed.begin(), dashed.end(), '_', '-');
            flags += ",--" + dashed;
        }
        app.add_option_function<std::string>(
               flags, [&overrides, name](const std::string& v) { overrides[name] = v; },
               "override " + name)
            ->group("Configuration");
    }

    auto* exchange = app.add_subcommand("exchange", "Monte-Carlo key exchanges");
    auto* attack = app.add_subcommand("attack", "Eavesdropping and active attack studies");
    std::string attack_kind;
    attack->add_option("kind", attack_kind, "passive | mitm | injection")->required();

    auto* lifetime = app.add_subcommand("card-lifetime", "Full card sessions with optional faults");
    std::size_t n_sessions = 3;
    std::string faults_inline;
    std::string fault_script_path;
    std::string keystore_path;
    lifetime->add_option("--sessions", n_sessions, "number of sessions");
    lifetime->add_option("--faults", faults_inline, "e.g. 3:wrong-key,5:mitm-refresh");
    lifetime->add_option("--fault-script", fault_script_path, "file with '<session> <fault>' lines");
    lifetime->add_option("--keystore", keystore_path, "append-only keystore journal");

    auto* rate = app.add_subcommand("rate", "Secure-bit rate in simulated time");
    std::size_t key_bits = 1024;
    rate->add_option("--key-bits", key_bits, "length of the exchanged key");

    auto* inspect = app.add_subcommand("keystore-inspect", "Latest record per card");
    std::string inspect_path;
    bool reveal = false;
    inspect->add_option("--keystore", inspect_path, "keystore journal")->required();
    inspect->add_flag("--reveal", reveal, "include key C in hex");

    auto* check = app.add_subcommand("check-records", "Validate a record stream");
    std::string check_path;
    check->add_option("file", check_path, "record file (stdin when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (check->parsed()) {
            std::size_t bad;
            if (check_path.empty()) {
                bad = check_record_stream(std::cin, err);
            } else {
                std::ifstream in(check_path);
                if (!in) throw IoError("cannot read " + check_path);
                bad = check_record_stream(in, err);
            }
            return bad ? kExitUsage : kExitOk;
        }

        RunConfig cfg;
        if (!config_path.empty()) apply_config_file(cfg, config_path);
        if (const char* env = std::getenv("KLJN_SEED"); env && *env) apply_setting(cfg, "seed", env);
        for (const auto& [k, v] : overrides) apply_setting(cfg, k, v);
        cfg.finalize();

        std::ofstream file;
        std::ostream* sink = &out;
        if (!cfg.output_path.empty()) {
            file.open(cfg.output_path, std::ios::binary | std::ios::trunc);
            if (!file) throw IoError("cannot open output " + cfg.output_path);
            sink = &file;
        }

        int code = kExitOk;
        if (exchange->parsed()) code = cmd_exchange(cfg, *sink);
        else if (attack->parsed()) code = cmd_attack(attack_kind, cfg, *sink);
        else if (lifetime->parsed()) {
            std::map<std::size_t, Fault> faults;
            if (!fault_script_path.empty()) {
                std::ifstream in(fault_script_path);
                if (!in) throw IoError("cannot read fault script " + fault_script_path);
                std::stringstream buf;
                buf << in.rdbuf();
                faults = parse_fault_script(buf.str());
            }
            for (const auto& [k, v] : parse_fault_script(faults_inline)) faults[k] = v;
            std::optional<std::string> ks;
            if (!keystore_path.empty()) ks = keystore_path;
            code = cmd_card_lifetime(cfg, n_sessions, faults, ks, *sink);
        } else if (rate->parsed()) code = cmd_rate(cfg, key_bits, *sink);
        else if (inspect->parsed()) code = cmd_keystore_inspect(inspect_path, reveal, *sink);

        sink->flush();
        if (!*sink) throw IoError("write to output failed");
        return code;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const ChannelCompromisedError& e) {
        err << "security abort: " << e.what() << '\n';
        return kExitSecurityAbort;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}

}  // namespace kljn::cli

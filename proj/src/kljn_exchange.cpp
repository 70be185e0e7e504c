#include "kljn/kljn_exchange.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kljn/errors.hpp"

namespace kljn {

namespace {

constexpr std::array<LoopClass, 3> kClasses{LoopClass::LL, LoopClass::MID, LoopClass::HH};

LoopClass nearest_level(double value, const std::array<double, 3>& levels, double margin,
                        const char* what) {
    if (!(value > 0.0)) throw DomainError(std::string(what) + ": level must be > 0");
    const double x = std::log(value);
    std::array<double, 3> logs{};
    for (std::size_t k = 0; k < 3; ++k) logs[k] = std::log(levels[k]);

    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
        if (std::abs(x - logs[k]) < std::abs(x - logs[best])) best = k;

    double neighbour = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < 3; ++k)
        if (k != best) neighbour = std::min(neighbour, std::abs(logs[k] - logs[best]));

    if (std::abs(x - logs[best]) > margin * neighbour)
        throw UnclassifiableError(std::string(what) + ": level outside every acceptance band");
    return kClasses[best];
}

double rms(std::span<const double> x) {
    if (x.empty()) return 0.0;
    double ss = 0.0;
    for (double v : x) ss += v * v;
    return std::sqrt(ss / static_cast<double>(x.size()));
}

std::optional<LoopClass> try_classify(const SpectraEstimate& s, const NoiseConfig& cfg,
                                      LoopClass (*classify)(const SpectraEstimate&,
                                                            const NoiseConfig&)) {
    try {
        return classify(s, cfg);
    } catch (const UnclassifiableError&) {
        return std::nullopt;
    }
}

}  // namespace

std::string_view to_string(LoopClass c) noexcept {
    switch (c) {
        case LoopClass::LL: return "LL";
        case LoopClass::MID: return "MID";
        case LoopClass::HH: return "HH";
    }
    return "?";
}

std::array<double, 3> voltage_levels(const NoiseConfig& cfg) {
    return {analytic_spectra(cfg.r_low, cfg.r_low, cfg).s_u,
            analytic_spectra(cfg.r_low, cfg.r_high, cfg).s_u,
            analytic_spectra(cfg.r_high, cfg.r_high, cfg).s_u};
}

std::array<double, 3> current_levels(const NoiseConfig& cfg) {
    return {analytic_spectra(cfg.r_low, cfg.r_low, cfg).s_i,
            analytic_spectra(cfg.r_low, cfg.r_high, cfg).s_i,
            analytic_spectra(cfg.r_high, cfg.r_high, cfg).s_i};
}

LoopClass classify_level(const SpectraEstimate& s, const NoiseConfig& cfg) {
    return nearest_level(s.s_u, voltage_levels(cfg), cfg.classify_margin, "classify_level");
}

LoopClass classify_current_level(const SpectraEstimate& s, const NoiseConfig& cfg) {
    return nearest_level(s.s_i, current_levels(cfg), cfg.classify_margin,
                         "classify_current_level");
}

MonitorReport monitor_compare(const WireTrace& a, const WireTrace& b, double tolerance) {
    if (a.voltage.size() != b.voltage.size() || a.current.size() != b.current.size() ||
        a.voltage.size() != a.current.size())
        throw DomainError("monitor_compare: views differ in length");

    const double v_threshold = tolerance * std::max(rms(a.voltage), rms(b.voltage));
    const double i_threshold = tolerance * std::max(rms(a.current), rms(b.current));

    MonitorReport report;
    for (std::size_t t = 0; t < a.size(); ++t) {
        const double dv = std::abs(a.voltage[t] - b.voltage[t]);
        const double di = std::abs(a.current[t] - b.current[t]);
        report.max_abs_voltage_diff = std::max(report.max_abs_voltage_diff, dv);
        report.max_abs_current_diff = std::max(report.max_abs_current_diff, di);
        if ((dv > v_threshold || di > i_threshold) && !report.first_alarm_index)
            report.first_alarm_index = t;
    }
    report.alarm = report.first_alarm_index.has_value();
    return report;
}

BitExchangeRecord run_bit_period(Bit alice_bit, Bit bob_bit, const NoiseConfig& cfg, Seed seed,
                                 const LoopChannel& channel, const ExchangeParams& params) {
    BitExchangeRecord rec;
    rec.alice_bit = alice_bit ? 1 : 0;
    rec.bob_bit = bob_bit ? 1 : 0;

    const double r_a = rec.alice_bit ? cfg.r_high : cfg.r_low;
    const double r_b = rec.bob_bit ? cfg.r_high : cfg.r_low;
    const auto u_a = generate_noise(johnson_psd(r_a, cfg), cfg, derive_seed(seed, Stream::alice_noise));
    const auto u_b = generate_noise(johnson_psd(r_b, cfg), cfg, derive_seed(seed, Stream::bob_noise));

    if (channel) {
        auto views = channel(LoopInputs{u_a, u_b, r_a, r_b, &cfg, seed});
        rec.trace = std::move(views.alice);
        rec.bob_trace = std::move(views.bob);
        rec.spectra_alice = measure_spectra(rec.trace, cfg);
        rec.spectra_bob = measure_spectra(rec.bob_trace, cfg);
    } else {
        rec.trace = compose_loop(u_a, u_b, r_a, r_b, cfg.sample_rate);
        rec.bob_trace = rec.trace;
        rec.spectra_alice = measure_spectra(rec.trace, cfg);
        rec.spectra_bob = rec.spectra_alice;
    }

    rec.loop_class = try_classify(rec.spectra_alice, cfg, classify_level);
    rec.bob_loop_class = try_classify(rec.spectra_bob, cfg, classify_level);
    const auto alice_current = try_classify(rec.spectra_alice, cfg, classify_current_level);
    const auto bob_current = try_classify(rec.spectra_bob, cfg, classify_current_level);

    rec.anomaly = !rec.loop_class || !rec.bob_loop_class || rec.loop_class != rec.bob_loop_class ||
                  alice_current != rec.loop_class || bob_current != rec.bob_loop_class;

    if (params.monitor_enabled) {
        rec.monitor = monitor_compare(rec.trace, rec.bob_trace, params.monitor_tolerance);
        rec.alarm = rec.monitor.alarm;
    }
    rec.retained = rec.loop_class == LoopClass::MID && !rec.alarm && !rec.anomaly;
    return rec;
}

KeyExchangeResult exchange_key(std::size_t target_len, const NoiseConfig& cfg, Seed seed,
                               const ExchangeOptions& options) {
    if (target_len == 0) throw DomainError("exchange_key: target_len must be >= 1");

    Rng alice_rng = make_rng(derive_seed(seed, Stream::alice_bits));
    Rng bob_rng = make_rng(derive_seed(seed, Stream::bob_bits));
    const std::size_t max_periods = options.max_periods_per_bit * target_len + 1000;

    KeyExchangeResult result;
    auto& stats = result.stats;
    std::vector<Bit> alice_key;
    std::vector<Bit> bob_key;
    alice_key.reserve(target_len);
    bob_key.reserve(target_len);

    while (bob_key.size() < target_len) {
        if (stats.periods_run >= max_periods)
            throw Error("exchange_key: no progress after " + std::to_string(max_periods) +
                        " bit periods");
        const std::size_t period = stats.periods_run;

        Bit a = static_cast<Bit>(alice_rng() >> 63);
        Bit b = static_cast<Bit>(bob_rng() >> 63);
        if (options.bit_source) std::tie(a, b) = options.bit_source(period);

        const auto rec = run_bit_period(a, b, cfg, derive_seed(seed, Stream::exchange, period),
                                        options.channel, options.params);
        ++stats.periods_run;
        if (rec.alarm) ++stats.alarms;
        if (rec.anomaly) ++stats.anomalies;
        if (rec.retained) {
            ++stats.retained;
            alice_key.push_back(kAliceInverts ? static_cast<Bit>(1 - rec.alice_bit) : rec.alice_bit);
            bob_key.push_back(kAliceInverts ? rec.bob_bit : static_cast<Bit>(1 - rec.bob_bit));
        }
        if (options.observer) options.observer(period, rec);

        if (static_cast<double>(stats.alarms) >
            options.params.max_alarm_rate * static_cast<double>(stats.periods_run))
            throw ChannelCompromisedError(
                "exchange_key: channel compromised (" + std::to_string(stats.alarms) +
                " alarms in " + std::to_string(stats.periods_run) + " periods)");
    }

    stats.discard_fraction =
        1.0 - static_cast<double>(stats.retained) / static_cast<double>(stats.periods_run);
    result.alice_key = BitString(std::move(alice_key), Provenance::raw_kljn);
    result.bob_key = BitString(std::move(bob_key), Provenance::raw_kljn);
    return result;
}

}  // namespace kljn

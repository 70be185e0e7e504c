#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <utility>

#include "kljn/bitstring.hpp"
#include "kljn/noise_physics.hpp"
#include "kljn/rng.hpp"

namespace kljn {

/// Wire noise level: both Low, mixed (LH or HL, indistinguishable), both High.
enum class LoopClass { LL, MID, HH };

std::string_view to_string(LoopClass c) noexcept;

/// Outcome of comparing the instantaneous values seen at the two ends.
struct MonitorReport {
    double max_abs_voltage_diff = 0.0;
    double max_abs_current_diff = 0.0;
    bool alarm = false;
    std::optional<std::size_t> first_alarm_index;
};

struct ExchangeParams {
    /// Alarm threshold relative to signal RMS.
    double monitor_tolerance = 1e-6;
    bool monitor_enabled = true;
    /// exchange_key aborts once alarms exceed this fraction of periods run.
    double max_alarm_rate = 0.0;
};

/// What each end measures on its side of the wire.
struct EndViews {
    WireTrace alice;
    WireTrace bob;
};

/// Generator outputs handed to a channel for one bit period.
struct LoopInputs {
    std::span<const double> u_a;
    std::span<const double> u_b;
    double r_a = 0.0;
    double r_b = 0.0;
    const NoiseConfig* cfg = nullptr;
    Seed seed = 0;
};

/// Replaces the ideal wire between the ends, e.g. with an attacker.
using LoopChannel = std::function<EndViews(const LoopInputs&)>;

struct BitExchangeRecord {
    Bit alice_bit = 0;
    Bit bob_bit = 0;
    WireTrace trace;      // Alice's end
    WireTrace bob_trace;  // identical to trace on an ideal wire
    SpectraEstimate spectra_alice;
    SpectraEstimate spectra_bob;
    std::optional<LoopClass> loop_class;  // Alice's voltage-level decision; empty if unclassifiable
    std::optional<LoopClass> bob_loop_class;
    MonitorReport monitor;
    /// Unclassifiable level, voltage/current disagreement, or ends disagreeing.
    bool anomaly = false;
    bool alarm = false;
    bool retained = false;
};

/// Analytic voltage PSD of each level, ordered LL, MID, HH.
std::array<double, 3> voltage_levels(const NoiseConfig& cfg);
/// Analytic current PSD of each level, ordered LL, MID, HH.
std::array<double, 3> current_levels(const NoiseConfig& cfg);

/// Nearest analytic level of s_u in log-space. Throws DomainError for
/// s_u <= 0 and UnclassifiableError outside the acceptance band.
LoopClass classify_level(const SpectraEstimate& s, const NoiseConfig& cfg);

/// Same decision made on s_i; used as a cross-check.
LoopClass classify_current_level(const SpectraEstimate& s, const NoiseConfig& cfg);

MonitorReport monitor_compare(const WireTrace& end_a_view, const WireTrace& end_b_view,
                              double tolerance);

/// One bit period: map bits to resistors, draw independent noises, route them
/// through the wire (or `channel`), measure and classify at both ends, and
/// compare the ends' instantaneous values.
BitExchangeRecord run_bit_period(Bit alice_bit, Bit bob_bit, const NoiseConfig& cfg, Seed seed,
                                 const LoopChannel& channel = {},
                                 const ExchangeParams& params = {});

struct ExchangeStats {
    std::size_t periods_run = 0;
    std::size_t retained = 0;
    std::size_t alarms = 0;
    std::size_t anomalies = 0;
    double discard_fraction = 0.0;

    /// Simulated seconds spent on the line.
    double simulated_seconds(const NoiseConfig& cfg) const noexcept {
        return static_cast<double>(periods_run) * cfg.bit_period_seconds();
    }
};

struct KeyExchangeResult {
    BitString alice_key;
    BitString bob_key;
    ExchangeStats stats;
};

struct ExchangeOptions {
    ExchangeParams params;
    LoopChannel channel;
    /// Overrides the ends' random bit choices; called with the period index.
    std::function<std::pair<Bit, Bit>(std::size_t)> bit_source;
    /// Sees every period as it completes.
    std::function<void(std::size_t, const BitExchangeRecord&)> observer;
    /// Hard cap on periods as a multiple of target_len (plus a fixed floor).
    std::size_t max_periods_per_bit = 64;
};

/// The side that inverts its retained bits.
inline constexpr bool kAliceInverts = true;

/**
 * Runs bit periods until target_len secure bits are retained. Alice inverts
 * her retained bits so both keys agree. Throws DomainError for target_len 0,
 * ChannelCompromisedError when the alarm rate exceeds params.max_alarm_rate.
 */
KeyExchangeResult exchange_key(std::size_t target_len, const NoiseConfig& cfg, Seed seed,
                               const ExchangeOptions& options = {});

}  // namespace kljn

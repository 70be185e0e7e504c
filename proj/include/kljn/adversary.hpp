#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "kljn/kljn_exchange.hpp"
#include "kljn/noise_physics.hpp"
#include "kljn/rng.hpp"

namespace kljn {

/// What a listening Eve concludes from one bit period.
struct EveEstimate {
    LoopClass loop_class_guess = LoopClass::MID;
    ResistorPair pair_guess;
    /// (alice_bit, bob_bit). For MID periods this is a coin flip.
    std::optional<std::pair<Bit, Bit>> bit_assignment_guess;
    /// Filled by whoever knows the truth.
    bool correct_assignment = false;
};

enum class AttackKind { passive, mitm, injection };

std::string_view to_string(AttackKind k) noexcept;

struct AttackOutcome {
    AttackKind kind = AttackKind::passive;
    bool detected = false;
    std::optional<std::size_t> detection_sample_index;
    /// Secure (retained) bits whose value Eve knows from physics, not guessing.
    std::size_t bits_learned = 0;
    std::size_t bits_retained_by_parties = 0;
    Bit alice_bit = 0;
    Bit bob_bit = 0;
    /// Eve's best guess of the retained key bit was right (coin flips included).
    std::optional<bool> eve_guess_correct;
};

struct AttackOptions {
    ExchangeParams params;
};

/**
 * Passive listener on the wire. Eve measures the spectra, classifies the
 * level with the public thresholds and solves for the resistor pair. On LL
 * and HH she learns both bits; on MID she knows the pair but has to guess
 * the assignment (`seed` drives the coin).
 */
EveEstimate passive_eavesdrop(const WireTrace& trace, const NoiseConfig& cfg, Seed seed = 0);

/// Eve's decision on the partner's bit in a loop she terminates herself with
/// `own_resistance`, using both voltage and current levels.
Bit infer_partner_bit(const SpectraEstimate& s, double own_resistance, const NoiseConfig& cfg);

/// Eve's resistor choices in a man-in-the-middle period and what she
/// concluded about each party's bit.
struct MitmKnowledge {
    Bit eve_toward_alice = 0;
    Bit eve_toward_bob = 0;
    Bit inferred_alice = 0;
    Bit inferred_bob = 0;
};

/// Channel in which Eve cuts the wire and terminates each half with her own
/// randomly chosen resistor and noise generator. Written to `knowledge` when
/// non-null.
LoopChannel mitm_channel(MitmKnowledge* knowledge = nullptr);

/// Channel in which Eve drives `injection` (ampere) into a mid-wire node;
/// half of it flows towards each end.
LoopChannel injection_channel(std::vector<double> injection);

/// One bit period of a man-in-the-middle attack with random party bits.
AttackOutcome mitm_attack(const NoiseConfig& cfg, Seed seed, const AttackOptions& options = {});

/// One bit period with a current injected mid-wire. Throws DomainError when
/// injection.size() != cfg.samples_per_bit.
AttackOutcome inject_current(const NoiseConfig& cfg, std::span<const double> injection, Seed seed,
                             const AttackOptions& options = {});

/// RMS of the loop current in a mixed (LH/HL) period, used to scale injections.
double mid_loop_current_rms(const NoiseConfig& cfg);

}  // namespace kljn

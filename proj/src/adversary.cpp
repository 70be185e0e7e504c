#include "kljn/adversary.hpp"

#include <cmath>
#include <limits>

#include "kljn/errors.hpp"

namespace kljn {

namespace {

Bit coin(Rng& rng) { return static_cast<Bit>(rng() >> 63); }

ResistorPair degenerate_pair(LoopClass c, const NoiseConfig& cfg) {
    const double r = c == LoopClass::LL ? cfg.r_low : cfg.r_high;
    return {r, r};
}

}  // namespace

std::string_view to_string(AttackKind k) noexcept {
    switch (k) {
        case AttackKind::passive: return "passive";
        case AttackKind::mitm: return "mitm";
        case AttackKind::injection: return "injection";
    }
    return "?";
}

EveEstimate passive_eavesdrop(const WireTrace& trace, const NoiseConfig& cfg, Seed seed) {
    const auto s = measure_spectra(trace, cfg);
    EveEstimate est;
    est.loop_class_guess = classify_level(s, cfg);

    switch (est.loop_class_guess) {
        case LoopClass::LL:
        case LoopClass::HH: {
            // The pair is degenerate, so the quadratic's discriminant sits at
            // zero and noise pushes it negative half the time.
            try {
                est.pair_guess = infer_resistor_pair(s, cfg);
            } catch (const InconsistentSpectraError&) {
                est.pair_guess = degenerate_pair(est.loop_class_guess, cfg);
            }
            const Bit b = est.loop_class_guess == LoopClass::HH ? 1 : 0;
            est.bit_assignment_guess = std::pair<Bit, Bit>{b, b};
            break;
        }
        case LoopClass::MID: {
            est.pair_guess = infer_resistor_pair(s, cfg);
            Rng rng = make_rng(derive_seed(seed, Stream::eve));
            const Bit a = coin(rng);
            est.bit_assignment_guess = std::pair<Bit, Bit>{a, static_cast<Bit>(1 - a)};
            break;
        }
    }
    return est;
}

Bit infer_partner_bit(const SpectraEstimate& s, double own_resistance, const NoiseConfig& cfg) {
    if (!(s.s_u > 0.0) || !(s.s_i > 0.0))
        throw DomainError("infer_partner_bit: spectra must be positive");
    Bit best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Bit b : {Bit{0}, Bit{1}}) {
        const auto e = analytic_spectra(own_resistance, b ? cfg.r_high : cfg.r_low, cfg);
        const double du = std::log(s.s_u / e.s_u);
        const double di = std::log(s.s_i / e.s_i);
        const double d = du * du + di * di;
        if (d < best_dist) {
            best_dist = d;
            best = b;
        }
    }
    return best;
}

LoopChannel mitm_channel(MitmKnowledge* knowledge) {
    return [knowledge](const LoopInputs& in) {
        const NoiseConfig& cfg = *in.cfg;
        Rng rng = make_rng(derive_seed(in.seed, Stream::eve));
        const Bit e_a = coin(rng);
        const Bit e_b = coin(rng);
        const double r_ea = e_a ? cfg.r_high : cfg.r_low;
        const double r_eb = e_b ? cfg.r_high : cfg.r_low;

        const auto u_ea = generate_noise(johnson_psd(r_ea, cfg), cfg,
                                         derive_seed(in.seed, Stream::eve_noise_a));
        const auto u_eb = generate_noise(johnson_psd(r_eb, cfg), cfg,
                                         derive_seed(in.seed, Stream::eve_noise_b));

        EndViews views{compose_loop(in.u_a, u_ea, in.r_a, r_ea, cfg.sample_rate),
                       compose_loop(u_eb, in.u_b, r_eb, in.r_b, cfg.sample_rate)};
        if (knowledge) {
            knowledge->eve_toward_alice = e_a;
            knowledge->eve_toward_bob = e_b;
            knowledge->inferred_alice =
                infer_partner_bit(measure_spectra(views.alice, cfg), r_ea, cfg);
            knowledge->inferred_bob = infer_partner_bit(measure_spectra(views.bob, cfg), r_eb, cfg);
        }
        return views;
    };
}

LoopChannel injection_channel(std::vector<double> injection) {
    return [injection = std::move(injection)](const LoopInputs& in) {
        if (injection.size() != in.u_a.size())
            throw DomainError("injection_channel: injection length mismatch");
        const auto wire = compose_loop(in.u_a, in.u_b, in.r_a, in.r_b, in.cfg->sample_rate);
        EndViews views{wire, wire};
        // Alice's meter counts current flowing towards Bob, so Eve's share
        // flowing into Alice's end shows up with a negative sign.
        for (std::size_t t = 0; t < injection.size(); ++t) {
            views.alice.current[t] -= 0.5 * injection[t];
            views.bob.current[t] += 0.5 * injection[t];
        }
        return views;
    };
}

AttackOutcome mitm_attack(const NoiseConfig& cfg, Seed seed, const AttackOptions& options) {
    Rng alice_rng = make_rng(derive_seed(seed, Stream::alice_bits));
    Rng bob_rng = make_rng(derive_seed(seed, Stream::bob_bits));
    const Bit a = coin(alice_rng);
    const Bit b = coin(bob_rng);

    MitmKnowledge eve;
    const auto rec = run_bit_period(a, b, cfg, seed, mitm_channel(&eve), options.params);

    AttackOutcome out;
    out.kind = AttackKind::mitm;
    out.alice_bit = a;
    out.bob_bit = b;
    out.detected = rec.alarm;
    if (rec.alarm) out.detection_sample_index = rec.monitor.first_alarm_index;
    out.bits_retained_by_parties = rec.retained ? 1 : 0;
    if (rec.retained) {
        out.eve_guess_correct = eve.inferred_bob == b;
        out.bits_learned = (eve.inferred_alice == a && eve.inferred_bob == b) ? 1 : 0;
    }
    return out;
}

AttackOutcome inject_current(const NoiseConfig& cfg, std::span<const double> injection, Seed seed,
                             const AttackOptions& options) {
    if (injection.size() != cfg.samples_per_bit)
        throw DomainError("inject_current: injection length must equal samples_per_bit");
    Rng alice_rng = make_rng(derive_seed(seed, Stream::alice_bits));
    Rng bob_rng = make_rng(derive_seed(seed, Stream::bob_bits));
    const Bit a = coin(alice_rng);
    const Bit b = coin(bob_rng);

    const auto rec = run_bit_period(
        a, b, cfg, seed, injection_channel({injection.begin(), injection.end()}), options.params);

    AttackOutcome out;
    out.kind = AttackKind::injection;
    out.alice_bit = a;
    out.bob_bit = b;
    out.detected = rec.alarm;
    if (rec.alarm) out.detection_sample_index = rec.monitor.first_alarm_index;
    out.bits_retained_by_parties = rec.retained ? 1 : 0;
    if (rec.retained) {
        // Besides injecting, Eve listens at Alice's end of the wire.
        try {
            const auto guess = passive_eavesdrop(rec.trace, cfg, seed);
            out.eve_guess_correct =
                guess.bit_assignment_guess && guess.bit_assignment_guess->second == b;
        } catch (const Error&) {
            out.eve_guess_correct = false;
        }
    }
    return out;
}

double mid_loop_current_rms(const NoiseConfig& cfg) {
    return std::sqrt(analytic_spectra(cfg.r_low, cfg.r_high, cfg).s_i * cfg.bandwidth);
}

}  // namespace kljn

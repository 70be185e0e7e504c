#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kljn/rng.hpp"

namespace kljn {

inline constexpr double kBoltzmann = 1.380649e-23;  // J/K, exact SI value

/**
 * Physical and sampling parameters of one KLJN line.
 *
 * Resistances in ohm, temperatures in kelvin, frequencies in hertz. The
 * defaults give 1000 bit periods per simulated second at 100 kHz bandwidth
 * (critical sampling, 200 samples per bit).
 */
struct NoiseConfig {
    double r_low = 1.0e3;
    double r_high = 10.0e3;
    double t_eff = 1.0e12;
    double boltzmann_k = kBoltzmann;
    double bandwidth = 100.0e3;
    double sample_rate = 200.0e3;
    std::size_t samples_per_bit = 200;
    /// Half-width of each level's acceptance band, as a fraction of the
    /// log-distance to the nearest neighbouring level.
    double classify_margin = 0.5;

    /// Throws ConfigError when an invariant is violated.
    void validate() const;

    /// 4kT_eff, the common factor of every Johnson-noise level.
    double four_kt() const noexcept { return 4.0 * boltzmann_k * t_eff; }

    /// Duration of one bit period in simulated seconds.
    double bit_period_seconds() const noexcept {
        return static_cast<double>(samples_per_bit) / sample_rate;
    }

    /// True when sample_rate exceeds the Nyquist rate of the band and the
    /// synthesized noise must be low-pass filtered.
    bool oversampled() const noexcept;
};

/// Time-domain view of the wire during one bit period.
struct WireTrace {
    std::vector<double> voltage;  // V
    std::vector<double> current;  // A, positive from Alice towards Bob
    double sample_rate = 0.0;

    std::size_t size() const noexcept { return voltage.size(); }
};

/// Band-averaged power spectral densities of wire voltage and current.
struct SpectraEstimate {
    double s_u = 0.0;  // V^2/Hz
    double s_i = 0.0;  // A^2/Hz
    std::size_t n_samples = 0;
};

/// Unordered resistor pair; stored with lower <= upper so that equality is
/// order-free. Carries no claim about which end holds which value.
struct ResistorPair {
    double lower = 0.0;
    double upper = 0.0;

    static ResistorPair of(double a, double b) noexcept {
        return a <= b ? ResistorPair{a, b} : ResistorPair{b, a};
    }
};

/// Johnson formula S = 4 k T_eff R. Throws DomainError for r < 0.
double johnson_psd(double r, const NoiseConfig& cfg);

/**
 * Band-limited Gaussian noise for one bit period.
 *
 * Returns cfg.samples_per_bit zero-mean samples whose variance is
 * psd * bandwidth. At critical sampling the samples are i.i.d.; when the
 * config is oversampled, white noise is passed through a windowed-sinc
 * low-pass and rescaled to the same in-band variance. Pure in (psd, cfg, seed).
 */
std::vector<double> generate_noise(double psd, const NoiseConfig& cfg, Seed seed);

/**
 * Series-loop solution for two noise generators with source resistances.
 *
 *   i(t)   = (u_a(t) - u_b(t)) / (r_a + r_b)
 *   u_w(t) = (u_a(t) r_b + u_b(t) r_a) / (r_a + r_b)
 */
WireTrace compose_loop(std::span<const double> u_a, std::span<const double> u_b,
                       double r_a, double r_b, double sample_rate);

/// Sample variance over bandwidth for voltage and current.
SpectraEstimate measure_spectra(const WireTrace& trace, const NoiseConfig& cfg);

/// Exact wire spectra for ends holding r_a and r_b.
SpectraEstimate analytic_spectra(double r_a, double r_b, const NoiseConfig& cfg);

/// R_partner = 4kT_eff / s_i - r_a. May be negative for inconsistent input.
double infer_partner_resistance(double s_i, double r_a, const NoiseConfig& cfg);

/**
 * Both resistances of the loop from measured voltage and current spectra:
 * the roots of R^2 - (4kT_eff/s_i) R + s_u/s_i = 0.
 *
 * Throws InconsistentSpectraError when the discriminant is negative.
 */
ResistorPair infer_resistor_pair(const SpectraEstimate& s, const NoiseConfig& cfg);

}  // namespace kljn

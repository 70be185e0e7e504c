#include "kljn/noise_physics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "kljn/errors.hpp"

namespace kljn {

namespace {

// Relative slack on the Nyquist comparison and on the discriminant sign so
// that exactly-degenerate inputs survive floating-point rounding.
constexpr double kRelEps = 1e-12;
constexpr std::size_t kLowpassTaps = 129;

double sample_variance(std::span<const double> x) {
    const auto n = x.size();
    if (n < 2) return 0.0;
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : x) {
        const double d = v - mean;
        ss += d * d;
    }
    return ss / static_cast<double>(n - 1);
}

// Blackman-windowed sinc, cutoff at bandwidth / sample_rate.
std::vector<double> lowpass_kernel(double cutoff_ratio) {
    std::vector<double> h(kLowpassTaps);
    const double mid = static_cast<double>(kLowpassTaps - 1) / 2.0;
    for (std::size_t k = 0; k < kLowpassTaps; ++k) {
        const double m = static_cast<double>(k) - mid;
        const double sinc = m == 0.0
                                ? 2.0 * cutoff_ratio
                                : std::sin(2.0 * std::numbers::pi * cutoff_ratio * m) /
                                      (std::numbers::pi * m);
        const double w = 0.42 -
                         0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) /
                                        static_cast<double>(kLowpassTaps - 1)) +
                         0.08 * std::cos(4.0 * std::numbers::pi * static_cast<double>(k) /
                                         static_cast<double>(kLowpassTaps - 1));
        h[k] = sinc * w;
    }
    return h;
}

}  // namespace

void NoiseConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("invalid noise config: " + what); };
    if (!(r_low > 0.0)) fail("r_low must be > 0");
    if (!(r_high > r_low)) fail("r_high must be > r_low");
    if (!(t_eff > 0.0)) fail("t_eff must be > 0");
    if (!(boltzmann_k > 0.0)) fail("boltzmann_k must be > 0");
    if (!(bandwidth > 0.0)) fail("bandwidth must be > 0");
    if (!(sample_rate >= 2.0 * bandwidth * (1.0 - kRelEps)))
        fail("sample_rate must be >= 2 * bandwidth");
    if (samples_per_bit < 100) fail("samples_per_bit must be >= 100");
    if (!(classify_margin > 0.0 && classify_margin < 1.0))
        fail("classify_margin must lie in (0, 1)");
}

bool NoiseConfig::oversampled() const noexcept {
    return sample_rate > 2.0 * bandwidth * (1.0 + kRelEps);
}

double johnson_psd(double r, const NoiseConfig& cfg) {
    if (!(r >= 0.0)) throw DomainError("johnson_psd: resistance must be >= 0");
    return cfg.four_kt() * r;
}

std::vector<double> generate_noise(double psd, const NoiseConfig& cfg, Seed seed) {
    if (!(psd >= 0.0)) throw DomainError("generate_noise: psd must be >= 0");
    const std::size_t n = cfg.samples_per_bit;
    std::vector<double> out(n, 0.0);
    if (psd == 0.0) return out;

    const double target_var = psd * cfg.bandwidth;
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    if (!cfg.oversampled()) {
        const double sigma = std::sqrt(target_var);
        for (auto& x : out) x = sigma * normal(rng);
        return out;
    }

    const auto h = lowpass_kernel(cfg.bandwidth / cfg.sample_rate);
    double energy = 0.0;
    for (double c : h) energy += c * c;
    const double gain = std::sqrt(target_var / energy);

    std::vector<double> white(n + h.size() - 1);
    for (auto& x : white) x = normal(rng);
    for (std::size_t t = 0; t < n; ++t) {
        double acc = 0.0;
        for (std::size_t k = 0; k < h.size(); ++k) acc += h[k] * white[t + k];
        out[t] = gain * acc;
    }
    return out;
}

WireTrace compose_loop(std::span<const double> u_a, std::span<const double> u_b,
                       double r_a, double r_b, double sample_rate) {
    if (u_a.size() != u_b.size())
        throw DomainError("compose_loop: noise sequences differ in length");
    const double r_sum = r_a + r_b;
    if (r_sum == 0.0) throw DomainError("compose_loop: r_a + r_b must be nonzero");

    WireTrace trace;
    trace.sample_rate = sample_rate;
    trace.voltage.resize(u_a.size());
    trace.current.resize(u_a.size());
    for (std::size_t t = 0; t < u_a.size(); ++t) {
        trace.current[t] = (u_a[t] - u_b[t]) / r_sum;
        trace.voltage[t] = (u_a[t] * r_b + u_b[t] * r_a) / r_sum;
    }
    return trace;
}

SpectraEstimate measure_spectra(const WireTrace& trace, const NoiseConfig& cfg) {
    SpectraEstimate s;
    s.n_samples = trace.size();
    s.s_u = sample_variance(trace.voltage) / cfg.bandwidth;
    s.s_i = sample_variance(trace.current) / cfg.bandwidth;
    return s;
}

SpectraEstimate analytic_spectra(double r_a, double r_b, const NoiseConfig& cfg) {
    const double r_sum = r_a + r_b;
    return {cfg.four_kt() * r_a * r_b / r_sum, cfg.four_kt() / r_sum, 0};
}

double infer_partner_resistance(double s_i, double r_a, const NoiseConfig& cfg) {
    if (!(s_i > 0.0)) throw DomainError("infer_partner_resistance: s_i must be > 0");
    return cfg.four_kt() / s_i - r_a;
}

ResistorPair infer_resistor_pair(const SpectraEstimate& s, const NoiseConfig& cfg) {
    if (!(s.s_u > 0.0) || !(s.s_i > 0.0))
        throw DomainError("infer_resistor_pair: s_u and s_i must be > 0");
    const double sum = cfg.four_kt() / s.s_i;
    const double product = s.s_u / s.s_i;
    double disc = sum * sum - 4.0 * product;
    if (disc < 0.0) {
        if (disc < -kRelEps * sum * sum)
            throw InconsistentSpectraError("infer_resistor_pair: inconsistent spectra");
        disc = 0.0;
    }
    const double upper = 0.5 * (sum + std::sqrt(disc));
    return ResistorPair::of(product / upper, upper);
}

}  // namespace kljn

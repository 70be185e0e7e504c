#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kljn/noise_physics.hpp"
#include "kljn/rng.hpp"

namespace kljn::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitIo = 3,
    kExitSecurityAbort = 4,
};

/// Everything a subcommand needs. Precedence when assembling:
/// defaults < config file < KLJN_SEED < command line.
struct RunConfig {
    NoiseConfig noise;
    /// Unless set explicitly, sample_rate follows 2 * bandwidth.
    bool sample_rate_set = false;

    std::size_t m_max = 5;
    /// Monitor samples per session; 0 derives it from the session size.
    std::size_t n_d = 0;
    std::size_t min_segment_bits = 64;
    std::size_t trials = 1;
    Seed seed = 1;
    std::string output_path;  // empty: stdout

    std::size_t target_bits = 256;
    std::size_t payload_bytes = 16;
    double monitor_tolerance = 1e-6;
    bool monitor_enabled = true;
    double injection_rms = 10.0;  // multiples of the mixed-level loop current RMS
    /// Wire model for `exchange`: none, mitm or injection.
    std::string adversary = "none";
    std::size_t threads = 0;      // 0: hardware concurrency

    std::string card_number = "4000123412341234";
    std::string holder_name = "A. Cardholder";
    std::string expiry = "12/2030";

    /// Resolves derived fields and checks every invariant; throws ConfigError.
    void finalize();
    std::size_t effective_n_d() const;
};

/// Names accepted by apply_setting, in documentation order.
const std::vector<std::string>& setting_names();

/// Sets one key=value pair. Throws ConfigError for unknown keys or values
/// that do not parse.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

/// Reads flat `key = value` lines; `#` starts a comment.
void apply_config_text(RunConfig& cfg, std::string_view text);
void apply_config_file(RunConfig& cfg, const std::string& path);

/// Fault injected into one session of a card lifetime.
enum class Fault { none, wrong_key, mitm_auth, mitm_refresh };

std::string_view to_string(Fault f) noexcept;

/// Parses "3:wrong-key,5:mitm-refresh" or one "session kind" pair per line.
std::map<std::size_t, Fault> parse_fault_script(std::string_view text);

/// Record sinks write one JSON object per line.
using Record = nlohmann::ordered_json;

int cmd_exchange(const RunConfig& cfg, std::ostream& out);
int cmd_attack(std::string_view kind, const RunConfig& cfg, std::ostream& out);
int cmd_card_lifetime(const RunConfig& cfg, std::size_t n_sessions,
                      const std::map<std::size_t, Fault>& faults,
                      const std::optional<std::string>& keystore_path, std::ostream& out);
int cmd_rate(const RunConfig& cfg, std::size_t key_bits, std::ostream& out);
int cmd_keystore_inspect(const std::string& keystore_path, bool reveal, std::ostream& out);

/// Empty when the record carries a known schema, version and all required
/// fields; otherwise the reason it does not.
std::optional<std::string> validate_record(const nlohmann::json& record);

/// Validates every line of a record stream; returns the number of bad lines
/// and reports each one to `err`.
std::size_t check_record_stream(std::istream& in, std::ostream& err);

/// Full command-line entry point.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kljn::cli

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "kljn/card_protocol.hpp"

namespace kljn {

/**
 * Append-only journal of server records, one JSON object per line in a
 * fixed field order. Loading replays the file; the last record for a card
 * number wins.
 */
class Keystore {
public:
    explicit Keystore(std::filesystem::path path) : path_(std::move(path)) {}

    const std::filesystem::path& path() const noexcept { return path_; }

    /// Throws IoError when the file cannot be written.
    void append(const ServerRecord& record);

    /// Missing file loads as empty. Throws IoError on read failure and
    /// Error on a malformed line.
    std::map<std::string, ServerRecord> load() const;

    static std::string serialize(const ServerRecord& record);
    static ServerRecord parse(std::string_view line);

private:
    std::filesystem::path path_;
};

/// Server pre-populated from the journal and journaling into it.
void restore_server(Server& server, const Keystore& keystore);

}  // namespace kljn

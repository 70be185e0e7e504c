#include "kljn/keystore.hpp"

#include <fstream>

#include <json.hpp>

#include "kljn/errors.hpp"

namespace kljn {

namespace {

constexpr std::string_view kSchema = "kljn.keystore";
constexpr int kVersion = 1;

}  // namespace

std::string Keystore::serialize(const ServerRecord& r) {
    nlohmann::ordered_json j;
    j["schema"] = kSchema;
    j["version"] = kVersion;
    j["card_number"] = r.identity.card_number;
    j["holder_name"] = r.identity.holder_name;
    j["expiry"] = r.identity.expiry();
    j["c_bits"] = r.key_c.bits().size();
    j["c_hex"] = r.key_c.bits().to_hex();
    j["segment_len"] = r.key_c.segment_len();
    j["m_max"] = r.key_c.m_max();
    j["cursor"] = r.key_c.cursor();
    j["broken_count"] = r.broken_count_mirror;
    j["canceled"] = r.canceled;
    j["generation"] = r.key_c.generation();
    return j.dump();
}

ServerRecord Keystore::parse(std::string_view line) {
    try {
        const auto j = nlohmann::json::parse(line);
        if (j.at("schema").get<std::string>() != kSchema || j.at("version").get<int>() != kVersion)
            throw Error("keystore: unsupported record schema");
        ServerRecord r;
        r.identity = CardIdentity::with_expiry(j.at("card_number").get<std::string>(),
                                               j.at("holder_name").get<std::string>(),
                                               j.at("expiry").get<std::string>());
        auto bits = BitString::from_hex(j.at("c_hex").get<std::string>(),
                                        j.at("c_bits").get<std::size_t>(), Provenance::key_c);
        r.key_c = KeyC(std::move(bits), j.at("segment_len").get<std::size_t>(),
                       j.at("m_max").get<std::size_t>(), j.at("generation").get<std::size_t>(),
                       j.at("cursor").get<std::size_t>());
        r.broken_count_mirror = j.at("broken_count").get<std::size_t>();
        r.canceled = j.at("canceled").get<bool>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("keystore: malformed record: ") + e.what());
    }
}

void Keystore::append(const ServerRecord& record) {
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw IoError("keystore: cannot open " + path_.string() + " for append");
    out << serialize(record) << '\n';
    out.flush();
    if (!out) throw IoError("keystore: write to " + path_.string() + " failed");
}

std::map<std::string, ServerRecord> Keystore::load() const {
    std::map<std::string, ServerRecord> records;
    std::error_code ec;
    if (!std::filesystem::exists(path_, ec)) return records;
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw IoError("keystore: cannot open " + path_.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto r = parse(line);
        auto number = r.identity.card_number;
        records.insert_or_assign(std::move(number), std::move(r));
    }
    if (in.bad()) throw IoError("keystore: read from " + path_.string() + " failed");
    return records;
}

void restore_server(Server& server, const Keystore& keystore) {
    for (auto& [number, record] : keystore.load()) server.restore(std::move(record));
}

}  // namespace kljn

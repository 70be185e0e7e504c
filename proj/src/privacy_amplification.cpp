#include "kljn/privacy_amplification.hpp"

#include <vector>

#include "kljn/errors.hpp"

namespace kljn {

BitString xor_stage(const BitString& input) {
    if (input.size() < 2) throw DomainError("xor_stage: need at least 2 bits");
    std::vector<Bit> out(input.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<Bit>(input[2 * i] ^ input[2 * i + 1]);
    return BitString(std::move(out), input.provenance());
}

BitString amplify(const BitString& input) {
    if (input.size() < 8) throw DomainError("amplify: need at least 8 bits");
    if (input.provenance() != Provenance::raw_kljn)
        throw ProtocolError("amplify: only raw KLJN bits can be amplified");
    return xor_stage(xor_stage(xor_stage(input))).relabeled(Provenance::amplified);
}

}  // namespace kljn

#pragma once

#include "kljn/bitstring.hpp"

namespace kljn {

/// One pairwise-XOR compression: out[i] = in[2i] ^ in[2i+1]. A trailing odd
/// bit is dropped. Throws DomainError for inputs shorter than 2 bits.
/// Provenance is preserved.
BitString xor_stage(const BitString& input);

/// Three xor_stage passes (eightfold length reduction). Input must be raw
/// KLJN output of at least 8 bits; the result is labelled amplified.
BitString amplify(const BitString& input);

}  // namespace kljn

#pragma once

#include <stdexcept>
#include <string>

namespace kljn {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An argument lies outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// A configuration violates its invariants.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Measured spectra admit no real resistor pair.
class InconsistentSpectraError : public DomainError {
public:
    using DomainError::DomainError;
};

/// A measured level falls outside every acceptance band.
class UnclassifiableError : public Error {
public:
    using Error::Error;
};

/// The alarm rate of a key exchange exceeded its threshold.
class ChannelCompromisedError : public Error {
public:
    using Error::Error;
};

/// Card-protocol misuse: illegal phase transition, reused key material, ...
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// Not enough unconsumed one-time-pad bits for the request.
class KeyExhaustedError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace kljn

#pragma once

#include <stdexcept>
#include <string>

namespace poisonlab {

// Exit-code mapping for the CLI lives in tools/; the library just throws.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration (unknown concept name, empty axis, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Token or concept not present in the closed vocabulary.
struct VocabularyError : ConfigError {
    using ConfigError::ConfigError;
};

// A caller violated a documented precondition (non-unit vector, unfrozen
// encoder, wrong checkpoint role, shape mismatch).
struct ContractError : Error {
    using Error::Error;
};

// File / serialization problems.
struct IoError : Error {
    using Error::Error;
};

// Non-finite or otherwise unusable numeric result.
struct NumericalError : Error {
    using Error::Error;
};

// A pipeline stage failed its quality gate.
struct StageGateError : Error {
    using Error::Error;
};

// Variant retrieval could not satisfy the requested draw count.
struct InsufficientVariantsError : Error {
    int requested = 0;
    int available = 0;
    InsufficientVariantsError(int req, int avail, const std::string& msg)
        : Error(msg), requested(req), available(avail) {}
};

}  // namespace poisonlab

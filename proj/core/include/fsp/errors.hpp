#pragma once

#include <stdexcept>

namespace fsp {

// Bad configuration value or unsupported option.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or truncated file.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Candidate set built against a different cloud generation.
struct StaleCandidateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fsp

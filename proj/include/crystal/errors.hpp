#pragma once

#include <stdexcept>
#include <string>

namespace crystal {

// Error taxonomy used across the library. Each maps onto one failure class:
// shape problems, violated preconditions, bad numerics, unknown tokens,
// malformed input files and rejected configuration.

struct DimensionError : std::invalid_argument {
    explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct VocabularyError : std::invalid_argument {
    explicit VocabularyError(const std::string& what) : std::invalid_argument(what) {}
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace crystal

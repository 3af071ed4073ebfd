#pragma once

#include <stdexcept>
#include <string>

namespace ovd {

// Error taxonomy shared by all pipeline stages. Each condition named by a
// module contract gets its own type so callers can catch precisely.
struct ZeroVectorError : std::runtime_error {
    explicit ZeroVectorError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionMismatchError : std::runtime_error {
    explicit DimensionMismatchError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SequenceTooLongError : std::runtime_error {
    explicit SequenceTooLongError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidBoxError : std::runtime_error {
    explicit InvalidBoxError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyBaseError : std::runtime_error {
    explicit EmptyBaseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyCorpusError : std::runtime_error {
    explicit EmptyCorpusError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NonFiniteLossError : std::runtime_error {
    explicit NonFiniteLossError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NoProposalsError : std::runtime_error {
    explicit NoProposalsError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidSpecError : std::runtime_error {
    explicit InvalidSpecError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ovd

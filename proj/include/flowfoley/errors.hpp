#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ff {

// Error taxonomy shared by the whole library. The CLI maps these onto
// stable exit codes (usage=2, validation=3, numeric=4).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or dimension disagreement between tensors.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// A precondition of an operation was violated by the caller.
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Invalid user-facing configuration or input data.
struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Non-finite values, solver failures and the like.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Malformed serialized data; carries the byte offset of the problem.
struct FormatError : Error {
    FormatError(const std::string& msg, std::uint64_t offset)
        : Error(msg + " (at byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    std::uint64_t byte_offset;
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace ff

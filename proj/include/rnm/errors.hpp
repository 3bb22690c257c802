#pragma once

#include <stdexcept>
#include <string>

namespace rnm {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A recorded value came out NaN or infinite.
struct NonFiniteValue : Error {
    using Error::Error;
};

// A linear solve hit a pivot below the singularity threshold.
struct SingularMatrix : Error {
    using Error::Error;
};

struct InvalidConfig : Error {
    using Error::Error;
};

struct InvalidDistance : Error {
    using Error::Error;
};

struct OddUserCount : Error {
    using Error::Error;
};

struct TooLarge : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct FormatVersionMismatch : Error {
    using Error::Error;
};

struct DimensionMismatch : Error {
    using Error::Error;
};

struct ParseError : Error {
    ParseError(const std::string& msg, int line_number)
        : Error("line " + std::to_string(line_number) + ": " + msg), line(line_number) {}
    int line;
};

struct UnknownKey : Error {
    using Error::Error;
};

}  // namespace rnm

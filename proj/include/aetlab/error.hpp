#pragma once

#include <stdexcept>
#include <string>

namespace aetlab {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A tensor shape did not match what a primitive or model expected.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A precondition on an argument was violated (out-of-range epoch, empty set, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A non-finite value showed up where training or optimisation cannot continue.
class NumericError : public Error {
public:
    using Error::Error;
};

enum class ParseErrorKind { BadMagic, Truncated, DimensionMismatch, BadLength, BadLabel, BadFormat };

const char* to_string(ParseErrorKind kind);

class ParseError : public Error {
public:
    ParseError(ParseErrorKind kind, const std::string& what)
        : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
    ParseErrorKind kind() const noexcept { return kind_; }

private:
    ParseErrorKind kind_;
};

/// Experiment configuration problems; the CLI maps these to exit code 1.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace aetlab

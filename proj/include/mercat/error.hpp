#pragma once

#include <stdexcept>
#include <string>

namespace mercat {

/// Base for every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An index or dimension argument outside its valid range.
class RangeError : public Error {
public:
    using Error::Error;
};

/// Operands whose dimensions disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid or insufficient configuration (batch too small, bad nested dims, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed file or wire payload.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Correlation requested on an input with zero variance.
class CorrelationError : public Error {
public:
    using Error::Error;
};

/// Two metric reports that cannot be compared.
class ComparisonError : public Error {
public:
    using Error::Error;
};

/// Rejected user input (e.g. an empty item title).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage failed; carries the stage name.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& cause)
        : Error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace mercat

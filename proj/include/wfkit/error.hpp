#pragma once

#include <stdexcept>
#include <string>

namespace wfkit {

/// Base error type. `category()` is a stable, machine-parseable token used by
/// the CLI to emit single-line error reports ("error: <category>: <message>").
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& msg)
        : std::runtime_error(msg), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

/// Bad parameters, out-of-range knobs, invalid flag combinations.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

/// Malformed input text (trace files, CSVs). Carries line context in the message.
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error("parse", msg) {}
};

/// Timestamps out of order beyond tolerance.
struct OrderingError : Error {
    explicit OrderingError(const std::string& msg) : Error("ordering", msg) {}
};

/// Filesystem and stream failures.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io", msg) {}
};

/// Tensor rank/dimension mismatches.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape", msg) {}
};

/// Dataset-level problems: duplicates, empty directories, missing classes.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data", msg) {}
};

/// NaN/Inf detected in a numeric kernel, or a diverging training run.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

} // namespace wfkit

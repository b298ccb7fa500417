#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace asap {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file contents. `field()` names the offending header field.
class FormatError : public Error {
public:
    FormatError(std::string field, const std::string& what)
        : Error("format error in '" + field + "': " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class UnsupportedDatatypeError : public Error {
public:
    explicit UnsupportedDatatypeError(int code)
        : Error("unsupported NIfTI datatype code " + std::to_string(code) +
                " (supported: uint8, int16, int32, float32, float64)"),
          code_(code) {}
    int code() const noexcept { return code_; }

private:
    int code_;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Refusal to replace an existing output.
class OverwriteError : public IoError {
public:
    using IoError::IoError;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

class ParameterError : public Error {
public:
    using Error::Error;
};

class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::vector<double> trace)
        : Error(what), trace_(std::move(trace)) {}
    /// Log-likelihood per iteration.
    const std::vector<double>& log_likelihood_trace() const noexcept { return trace_; }

private:
    std::vector<double> trace_;
};

class DesignError : public Error {
public:
    using Error::Error;
};

/// Collects several independent failures into one throwable.
class AggregateError : public Error {
public:
    explicit AggregateError(std::vector<std::string> messages)
        : Error(join(messages)), messages_(std::move(messages)) {}
    const std::vector<std::string>& messages() const noexcept { return messages_; }

private:
    static std::string join(const std::vector<std::string>& m) {
        std::string out;
        for (const auto& s : m) {
            if (!out.empty()) out += "\n";
            out += s;
        }
        return out;
    }
    std::vector<std::string> messages_;
};

}  // namespace asap

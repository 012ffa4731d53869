#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evolab {

// Each category maps to a distinct process exit code in the CLI.
enum class ErrorCategory {
    validation,
    not_found,
    configuration,
    storage,
    parse,
    consistency,
    retryable,
    protocol,
    format,
    setup,
    search,
};

const char* to_string(ErrorCategory category);
int exit_code_for(ErrorCategory category);

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& message) : Error(ErrorCategory::validation, message) {}
};

class NotFoundError : public Error {
public:
    explicit NotFoundError(const std::string& message) : Error(ErrorCategory::not_found, message) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error(ErrorCategory::configuration, message) {}
};

class StorageError : public Error {
public:
    explicit StorageError(const std::string& message) : Error(ErrorCategory::storage, message) {}
};

/// Malformed persisted data. `line()` is 1-based; 0 when the error is not line-addressable.
class ParseError : public Error {
public:
    ParseError(const std::string& message, std::size_t line = 0)
        : Error(ErrorCategory::parse, message), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ConsistencyError : public Error {
public:
    ConsistencyError(const std::string& message, std::string phase)
        : Error(ErrorCategory::consistency, message), phase_(std::move(phase)) {}

    const std::string& phase() const noexcept { return phase_; }

private:
    std::string phase_;
};

/// A remote call kept failing after every configured retry.
class RetryableError : public Error {
public:
    RetryableError(const std::string& message, int attempts)
        : Error(ErrorCategory::retryable, message), attempts_(attempts) {}

    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

class ProtocolError : public Error {
public:
    explicit ProtocolError(const std::string& message) : Error(ErrorCategory::protocol, message) {}
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& message) : Error(ErrorCategory::format, message) {}
};

class SetupError : public Error {
public:
    explicit SetupError(const std::string& message) : Error(ErrorCategory::setup, message) {}
};

}  // namespace evolab

#pragma once

#include <stdexcept>
#include <string>

namespace ecgwvd {

// Error categories map one-to-one onto CLI exit codes.
enum class ExitCode : int { ok = 0, validation = 2, io = 3, divergence = 4 };

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept = 0;
};

class ValidationError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::validation; }
};

class IoError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::io; }
};

class DivergenceError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::divergence; }
};

// Row-level parse failure; `row` is zero-based.
class ParseError : public ValidationError {
public:
    ParseError(std::size_t row, const std::string& what)
        : ValidationError("row " + std::to_string(row) + ": " + what), row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

}  // namespace ecgwvd

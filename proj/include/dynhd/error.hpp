#pragma once

#include <stdexcept>
#include <string>

namespace dynhd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// A record failed to parse or violated a data-model invariant.
/// `line` is 1-based and 0 when the error is not tied to a file line.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what, std::size_t line = 0)
        : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Vector or matrix shapes do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Training or evaluation could not proceed (missing class, non-finite loss, ...).
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace dynhd

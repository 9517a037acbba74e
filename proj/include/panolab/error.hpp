#pragma once

#include <stdexcept>
#include <string>

namespace panolab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit an operation's contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A scalar argument outside its admissible range.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Container, PPM and scene-file failures. `kind()` distinguishes the cause.
class IoError : public Error {
public:
    enum class Kind { open, truncated, bad_magic, bad_version, extent_overflow, parse };

    IoError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

} // namespace panolab

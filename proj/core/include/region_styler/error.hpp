#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace region_styler {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FileNotFoundError : public Error {
public:
    using Error::Error;
};

/// The bytes could not be decoded as a supported raster format.
class DecodeError : public Error {
public:
    using Error::Error;
};

/// Decodable raster with a channel layout the library does not accept (CMYK, 2-channel, ...).
class UnsupportedFormatError : public Error {
public:
    using Error::Error;
};

/// Invalid user input. `field()` names the offending field so that services can
/// report machine-readable errors.
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& message)
        : Error(field.empty() ? message : field + ": " + message),
          field_(std::move(field)),
          message_(message) {}

    const std::string& field() const noexcept { return field_; }
    const std::string& message() const noexcept { return message_; }

private:
    std::string field_;
    std::string message_;
};

class UnknownLabelError : public ValidationError {
public:
    explicit UnknownLabelError(std::int64_t label, std::string field = "label")
        : ValidationError(std::move(field), "unknown label " + std::to_string(label)),
          label_(label) {}

    std::int64_t label() const noexcept { return label_; }

private:
    std::int64_t label_;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Prompt direction F_T(t) - F_T(anchor) vanished.
class DegenerateDirectionError : public Error {
public:
    using Error::Error;
};

/// Failure inside a pluggable backend; the message carries the backend name.
class BackendError : public Error {
public:
    BackendError(std::string backend, const std::string& message)
        : Error("backend '" + backend + "': " + message), backend_(std::move(backend)) {}

    const std::string& backend() const noexcept { return backend_; }

private:
    std::string backend_;
};

class CancelledError : public Error {
public:
    using Error::Error;
};

}  // namespace region_styler

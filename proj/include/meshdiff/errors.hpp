#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace meshdiff {

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class MissingUV : public Error {
public:
    explicit MissingUV(std::size_t line)
        : Error("line " + std::to_string(line) + ": face corner has no texture coordinate"), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class DegenerateFace : public Error {
public:
    DegenerateFace() : Error("degenerate triangle") {}
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class OutOfRange : public Error {
public:
    using Error::Error;
};

class UnsupportedOrder : public Error {
public:
    explicit UnsupportedOrder(int order)
        : Error("unsupported spherical harmonic order " + std::to_string(order)) {}
};

class IoError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class NoCoverage : public Error {
public:
    NoCoverage() : Error("no texel is observed by any camera view") {}
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Backend failures.
class BackendError : public Error {
public:
    using Error::Error;
};

class BackendUnavailable : public BackendError {
public:
    using BackendError::BackendError;
};

class BackendShapeError : public BackendError {
public:
    using BackendError::BackendError;
};

class BackendTimeout : public BackendError {
public:
    using BackendError::BackendError;
};

class PullbackUnsupported : public BackendError {
public:
    using BackendError::BackendError;
};

// The peer answered with an error frame.
class RemoteError : public BackendError {
public:
    using BackendError::BackendError;
};

} // namespace meshdiff

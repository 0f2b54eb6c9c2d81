// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace signpipe {

/// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text with a 1-based line number.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Bad argument value, e.g. a zero target length.
class ArgumentError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Input had nothing usable, e.g. a sample where every landmark is missing.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Gesture markup error at a byte offset, naming the offending tag.
class MarkupError : public Error {
public:
    MarkupError(std::size_t offset, std::string tag, const std::string& what)
        : Error(what + " '" + tag + "' at byte " + std::to_string(offset)), offset_(offset),
          tag_(std::move(tag)) {}
    std::size_t offset() const noexcept { return offset_; }
    const std::string& tag() const noexcept { return tag_; }

private:
    std::size_t offset_;
    std::string tag_;
};

class TemplateError : public Error {
public:
    using Error::Error;
};

/// Transport or protocol failure talking to an LLM endpoint.
class BackendError : public Error {
public:
    using Error::Error;
};

/// Socket-level failure: refused, reset, or closed mid-frame.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Wire-format violation.
class ProtocolError : public Error {
public:
    using Error::Error;
};

} // namespace signpipe

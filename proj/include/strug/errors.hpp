#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace strug {

/// A corpus line that is not valid JSON or breaks a data invariant.
class MalformedRecord : public std::runtime_error {
public:
    MalformedRecord(std::size_t line_no, std::string reason)
        : std::runtime_error("line " + std::to_string(line_no) + ": " + reason),
          line_no_(line_no),
          reason_(std::move(reason)) {}

    std::size_t line_no() const { return line_no_; }
    const std::string& reason() const { return reason_; }

private:
    std::size_t line_no_;
    std::string reason_;
};

class InsufficientCorpus : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class EmptySchema : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SequenceTooLong : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// SQL outside the supported Spider-like subset.
class UnsupportedSyntax : public std::runtime_error {
public:
    UnsupportedSyntax(std::string token, std::size_t offset, const std::string& what = "")
        : std::runtime_error("unsupported syntax at offset " + std::to_string(offset) + " near '" + token + "'" +
                             (what.empty() ? "" : ": " + what)),
          token_(std::move(token)),
          offset_(offset) {}

    const std::string& token() const { return token_; }
    std::size_t offset() const { return offset_; }

private:
    std::string token_;
    std::size_t offset_;
};

}  // namespace strug

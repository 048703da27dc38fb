#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tinymm {

// Dimension mismatch between operands.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Domain violation: zero-norm vector, degenerate softmax row, invalid count,
// invalid factor, unknown mode, and similar.
class ValueError : public std::runtime_error {
public:
    explicit ValueError(const std::string& what) : std::runtime_error(what) {}
};

// Compression schedule cannot be realized (token count would drop to zero).
class ScheduleError : public std::runtime_error {
public:
    explicit ScheduleError(const std::string& what) : std::runtime_error(what) {}
};

// Config file rejected; `field` names the offending key, dotted (e.g. "cmai.gamma_max").
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& what)
        : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

// Malformed binary file; `offset` is the byte position where parsing failed.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t offset, const std::string& what)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_ = 0;
};

}  // namespace tinymm

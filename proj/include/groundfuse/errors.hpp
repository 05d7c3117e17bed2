#pragma once

#include <stdexcept>
#include <string>

namespace groundfuse {

/// Precondition violated by a caller-supplied value (dimension mismatch,
/// out-of-range cell, empty selection, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed bytes in an interchange file. The message names the offending
/// field and the byte offset where decoding stopped.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& field, std::size_t offset, const std::string& what)
      : std::runtime_error(field + " (byte " + std::to_string(offset) + "): " + what),
        field_(field),
        offset_(offset) {}

  const std::string& field() const noexcept { return field_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::string field_;
  std::size_t offset_;
};

/// A structurally valid document whose contents are inconsistent. `code()` is
/// a stable, machine-readable name such as "attention_grid_mismatch".
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace groundfuse

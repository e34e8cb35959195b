#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xai {

/// Base class of every error thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Incompatible tensor or layer shapes; message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Violated operation precondition or malformed request.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents; carries the byte offset of the failure.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t byte_offset)
      : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_ = 0;
};

/// Filesystem failure (missing file, unwritable directory).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Numeric breakdown: non-finite values, divergence, vanishing denominators.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace xai

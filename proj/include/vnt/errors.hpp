#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace vnt {

/// Extents of two operands do not fit together.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition of an operation was violated by the caller.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or a numerically unusable result.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The raw rotation estimate is too close to singular to orthonormalize.
class DegeneratePoseError : public NumericError {
 public:
  DegeneratePoseError(const std::string& what, std::array<double, 3> singular_values)
      : NumericError(what), singular_values_(singular_values) {}

  const std::array<double, 3>& singular_values() const noexcept { return singular_values_; }

 private:
  std::array<double, 3> singular_values_;
};

/// Malformed input file; carries the 1-based line (text formats) or byte offset.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t offset)
      : std::runtime_error(what + " (line " + std::to_string(line) + ", offset " +
                           std::to_string(offset) + ")"),
        line_(line),
        offset_(offset) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t line_;
  std::size_t offset_;
};

/// Unknown or unsupported file format.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vnt

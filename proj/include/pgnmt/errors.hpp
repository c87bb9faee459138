#pragma once

#include <stdexcept>
#include <string>

namespace pgnmt {

// Bad user input: malformed config, unreadable file, invalid flag value.
// The CLI maps this family to exit code 1; everything else exits 2.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Shape or index mismatch between tensors. Messages name every shape involved.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

// Violated call contract that is not a shape problem (non-scalar backward
// seed, log of a non-positive value, gold id out of range, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace pgnmt

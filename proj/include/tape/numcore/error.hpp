#pragma once

#include <stdexcept>
#include <string>

namespace tape {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public NumericError {
 public:
  SingularityError(const std::string& what, std::size_t row)
      : NumericError(what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// A softmax row had no unmasked entry and the caller did not opt in.
class DegenerateRowError : public Error {
 public:
  using Error::Error;
};

// Violated API precondition (wrong graph, non-scalar output, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FileError : public Error {
 public:
  using Error::Error;
};

// Input longer than the configured context window.
class ContextError : public Error {
 public:
  using Error::Error;
};

}  // namespace tape

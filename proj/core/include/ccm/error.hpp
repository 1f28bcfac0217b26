#pragma once

#include <stdexcept>
#include <string>

namespace ccm {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform to an operation's shape rule.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an API was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf seen while debug checks are enabled.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid user-supplied data (labels, class sets, empty datasets, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. Messages name the byte offset of the problem.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// The rehearsal budget cannot be split into at least one slot per class.
class BudgetError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ccm

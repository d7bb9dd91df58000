#pragma once

#include <stdexcept>
#include <string>

namespace sciedkit {

// Error taxonomy mapped to CLI exit codes:
//   UsageError -> 1, TrainingError -> 3, everything else -> 2.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Bad values or shapes handed to an operation.
class InputError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset rows; message should carry file/line context.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violations of training policy contracts (e.g. the no-dilution rule).
class PolicyError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint deserialization failures (magic, version, truncation, hash).
class LoadError : public Error {
 public:
  using Error::Error;
};

// Runtime failures inside a training loop (non-finite gradients etc.).
class TrainingError : public Error {
 public:
  using Error::Error;
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 1;
  if (dynamic_cast<const TrainingError*>(&e)) return 3;
  if (dynamic_cast<const Error*>(&e)) return 2;
  return 2;
}

}  // namespace sciedkit

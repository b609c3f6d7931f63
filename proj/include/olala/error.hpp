#pragma once

#include <stdexcept>
#include <string>

namespace olala {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Singular or otherwise unusable lattice geometry.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// A learned generator collapsed (singular or not normalizable).
class DegenerateLatticeError : public GeometryError {
 public:
  using GeometryError::GeometryError;
};

/// A computation would exceed a configured size cap.
class ResourceError : public Error {
 public:
  using Error::Error;
};

/// Caller passed arguments that violate an operation's contract.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent wire payload.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared in a numeric routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

class PartitionError : public Error {
 public:
  using Error::Error;
};

/// Configuration parse or validation failure; `key()` names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace olala

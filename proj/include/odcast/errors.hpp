#pragma once

#include <stdexcept>
#include <string>

namespace odcast {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration: unknown option values, architecture mismatches,
/// missing paths named in a run config.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Shape or dimension disagreement between tensor operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (trip files, zone tables, cubes).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Training produced non-finite values and was aborted.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace odcast

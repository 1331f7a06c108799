#pragma once

#include <stdexcept>
#include <string>

namespace upliftkit {

/// Base class for all toolkit errors. CLI maps subtypes to exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid specs, schemas, hyperparameters, unknown names. Exit code 2.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Ingestion and data-consistency failures (bad CSV rows, dimension
/// mismatches, missing upstream artifacts). Exit code 1.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

/// Evaluation-time failures: absent arms, zero propensities, undefined
/// estimates (0/0), fingerprint mismatches. Exit code 1.
class EvalError : public Error {
 public:
  explicit EvalError(const std::string& msg) : Error(msg) {}
};

/// Problem too large for the requested solver. Exit code 1.
class SizeError : public Error {
 public:
  explicit SizeError(const std::string& msg) : Error(msg) {}
};

}  // namespace upliftkit

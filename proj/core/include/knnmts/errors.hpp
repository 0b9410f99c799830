#pragma once

#include <stdexcept>
#include <string>

namespace knnmts {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or array shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters, dataset settings or degenerate data.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered during training or in gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// API misuse: calling an operation outside its contract.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A query that cannot be served (e.g. K larger than the datastore).
class RequestError : public Error {
 public:
  using Error::Error;
};

}  // namespace knnmts

#pragma once

#include <stdexcept>
#include <string>

namespace cvos {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or extent disagreement between operands.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid argument value (stride <= 0, empty axis list, ...).
struct ParameterError : Error {
  using Error::Error;
};

// Input outside an operation's mathematical domain (log of non-positive, ...).
struct DomainError : Error {
  using Error::Error;
};

// Missing or inconsistent configuration (weight table gaps, preset mismatch).
struct ConfigError : Error {
  using Error::Error;
};

// Violated call contract (non-scalar loss, empty receptive field, ...).
struct ContractError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace cvos

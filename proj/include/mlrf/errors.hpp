#pragma once

#include <stdexcept>
#include <string>

namespace mlrf {

/// Tensor shapes do not agree for the requested operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An id or index lies outside its valid range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A model, fusion, training or decoding configuration is invalid.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition of an API call was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Input files could not be read or are inconsistent.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mlrf

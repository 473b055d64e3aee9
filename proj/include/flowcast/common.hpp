#pragma once

#include <stdexcept>
#include <string>

namespace flowcast {

// Numerical-stability constant used in every denominator that may vanish.
inline constexpr double kEps = 1e-8;

// A bad run configuration (flags, config file, parameter ranges).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input file does not match the documented schema (missing/renamed columns).
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input file parses but violates a data invariant (duplicate ids, bad order).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A value is outside the mathematical domain of an operation.
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shapes incompatible with the requested primitive.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse: non-scalar loss, repeated backward, and similar.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace flowcast

#pragma once

#include <stdexcept>
#include <string>

namespace degan {

// Bad argument to an operation (shape mismatch, out-of-range label, n <= 0).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite value where a finite one is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Attempt to mutate or train a frozen model.
class FrozenModelError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid architecture, experiment config, or manifest.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline precondition on its collaborators was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A runtime invariant failed inside a training run (digest drift, NaN loss).
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace degan

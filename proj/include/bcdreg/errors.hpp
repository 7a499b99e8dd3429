#pragma once

#include <stdexcept>
#include <string>

namespace bcdreg {

/// Operand dimensions do not fit together.
class shape_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A parameter violates its documented range (tau <= 1, zero column, ...).
class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The iteration produced a non-finite value or left the domain of a
/// nonlinear map (e.g. log of a non-positive intensity).
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bcdreg

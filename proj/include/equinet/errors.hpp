// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace equinet {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed arguments, parameters or files.
class InputError : public Error {
 public:
  using Error::Error;
};

/// The port/diode configuration admits no tree/cotree assignment.
class TopologyError : public Error {
 public:
  using Error::Error;
};

/// A linear system that should be invertible is not.
class DegenerateNetworkError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver ran out of iterations.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace equinet

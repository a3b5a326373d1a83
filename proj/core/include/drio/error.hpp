#pragma once

#include <stdexcept>
#include <string>

namespace drio {

// Base of every exception thrown by the library. Runtime failures (numerical
// breakdown, I/O after validation) use this type directly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Contract violations on inputs: bad shapes, malformed files, out-of-range
// options. The CLI maps these to exit status 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace drio

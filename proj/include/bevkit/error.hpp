#pragma once

#include <stdexcept>
#include <string>

namespace bevkit {

// Error taxonomy matches the CLI exit-code contract:
// IoError -> 2, ShapeError/ValueError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ValueError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

}  // namespace bevkit

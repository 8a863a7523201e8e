#pragma once

#include <stdexcept>
#include <string>

namespace revit {

// Error family maps onto CLI exit codes (see tools/revit.cpp):
// ConfigError -> 2, DataError -> 3, NumericalError -> 4, IoError -> 5.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericalError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace revit

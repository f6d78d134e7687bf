#pragma once

#include <stdexcept>
#include <string>

namespace trendkit {

/// Malformed or inconsistent input data (bad CSV, axis irregularities,
/// missing months, series too short for the requested model, ...).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure inside an algorithm (non-positive innovation variance,
/// singular covariance past recovery, diverging iteration, ...).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace trendkit

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace latseg {

// Bad input data or configuration: missing files, malformed manifests,
// shape mismatches, invalid parameter values.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Optimization produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw DataError(message);
}

}  // namespace latseg

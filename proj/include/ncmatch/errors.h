#pragma once

#include <stdexcept>

namespace ncmatch {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition.
struct ContractViolation : Error {
  using Error::Error;
};

// Requested tensor exceeds the configured element cap.
struct CapacityError : Error {
  using Error::Error;
};

// Missing or malformed input file.
struct IoError : Error {
  using Error::Error;
};

// Minimal sample is rank deficient beyond the expected null space.
struct DegeneracyError : Error {
  using Error::Error;
};

// Robust estimation found no acceptable model.
struct EstimationFailed : Error {
  using Error::Error;
};

// Cheirality vote has no unique winner.
struct AmbiguityError : Error {
  using Error::Error;
};

// Synthetic scene generation could not place points.
struct GenerationError : Error {
  using Error::Error;
};

// Dataset yields no close pairs to evaluate.
struct EmptySelection : Error {
  using Error::Error;
};

}  // namespace ncmatch

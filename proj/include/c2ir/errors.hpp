#pragma once

#include <stdexcept>
#include <string>

namespace c2ir {

// Error taxonomy mirrored by the CLI exit codes:
//   0 success, 1 configuration/input error, 2 missing or mismatched artifact,
//   3 numerical failure.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad arguments at call boundaries (shape mismatches, invalid class ids).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A pipeline stage output is absent or does not belong to the given model.
struct MissingArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (divergence, NaN inputs).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const MissingArtifactError*>(&e)) return 2;
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  return 1;
}

}  // namespace c2ir

#pragma once

#include <stdexcept>
#include <string>

namespace sic {

// Error taxonomy; the CLI maps these onto process exit codes
// (validation/contract/config/dataset -> 2, io/numeric -> 3).
struct dimension_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct validation_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Programmer-contract violations (index out of range, missing precondition).
struct contract_error : std::logic_error {
  using std::logic_error::logic_error;
};

struct config_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct dataset_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct degenerate_support_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A support entry whose source image is unavailable.
struct provenance_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values escaping an exposed operation, NaN gradients, etc.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sic

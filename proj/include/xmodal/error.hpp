#pragma once

#include <stdexcept>
#include <string>

namespace xmodal {

// Bad arguments, malformed config or shapes. The CLI maps these to exit 1.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/dimension mismatch between tensors.
struct DimError : InputError {
  using InputError::InputError;
};

// Failures at run time (non-finite values, I/O, exhausted mining). Exit 2.
struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : EvalError {
  using EvalError::EvalError;
};

// Raised when every negative candidate for an anchor is excluded.
struct MiningExhausted : EvalError {
  using EvalError::EvalError;
};

}  // namespace xmodal

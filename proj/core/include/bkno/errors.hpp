#pragma once

#include <stdexcept>
#include <string>

namespace bkno {

/// Malformed input document (bad JSON, missing/ill-typed fields).
struct parse_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Structurally valid input violating a domain invariant.
struct validation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical failure at run time (divergence, blow-up, non-convergence).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace bkno

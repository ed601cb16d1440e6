#pragma once

#include <stdexcept>
#include <string>

namespace tcd {

/// Input that violates a documented contract (bad file, unknown variable,
/// out-of-range configuration). Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tcd

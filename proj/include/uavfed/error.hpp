#pragma once

#include <stdexcept>
#include <string>

namespace uavfed {

/// Raised when an input file or configuration violates a documented invariant.
/// The message names the offending field or location.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace uavfed

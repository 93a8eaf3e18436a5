#pragma once

#include <stdexcept>

namespace cplink {

/// Invalid data, shapes, or configuration. The CLI maps this to exit status 1.
struct validation_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A file that cannot be read or parsed. Messages carry "path:line" context
/// where a line number makes sense.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-recoverable numerical failure inside the optimizer (non-finite
/// objective). The CLI maps this to exit status 2.
struct solver_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cplink

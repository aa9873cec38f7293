#pragma once

#include <stdexcept>
#include <string>

namespace patchnet {

/// Shape or argument contract violation.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Input geometry too small to process (e.g. a box of one pixel).
struct DegenerateInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A computation produced an unusable result, e.g. a box with no area.
struct DegenerateOutput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A data invariant that construction should have guaranteed does not hold.
struct InvariantViolation : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed file or config contents.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace patchnet

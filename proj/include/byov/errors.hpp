#pragma once

#include <stdexcept>

namespace byov {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training abort on a non-finite loss; the message names the first bad tensor.
struct NanError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace byov

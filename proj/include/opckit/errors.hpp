#pragma once

#include <stdexcept>
#include <string>

namespace opckit {

/// Base class for every error thrown by this library.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct io_error : error {
  using error::error;
};
struct format_error : error {
  using error::error;
};
struct schema_error : error {
  using error::error;
};
struct bounds_error : error {
  using error::error;
};
struct invalid_param : error {
  using error::error;
};
struct size_mismatch : error {
  using error::error;
};
struct degenerate_input : error {
  using error::error;
};
struct invalid_batch : error {
  using error::error;
};
struct degenerate_data : error {
  using error::error;
};
struct empty_graph : error {
  using error::error;
};
struct version_error : error {
  using error::error;
};
struct corrupt_data : error {
  using error::error;
};
struct mask_missing : error {
  using error::error;
};
struct config_error : error {
  using error::error;
};

}  // namespace opckit

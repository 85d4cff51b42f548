#pragma once

#include <stdexcept>

namespace deta {

/// File missing, unreadable, or malformed.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Configuration rejected: unknown key, bad value, or dimension mismatch
/// between a checkpoint and the run configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace deta

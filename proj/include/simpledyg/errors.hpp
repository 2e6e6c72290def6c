#pragma once

#include <stdexcept>
#include <string>

namespace simpledyg {

// Bad user-supplied configuration (flags, config file, out-of-range knobs).
// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad input data or a failure while running (parse errors, numeric blowups).
// The CLI maps this to exit code 1.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace simpledyg

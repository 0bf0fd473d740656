#pragma once

#include <stdexcept>
#include <string>

namespace faeclust {

// Exit codes used by the CLI. Library code throws; only main() maps to codes.
enum class ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

// Malformed inputs: unreadable files, bad CSV, schema violations, domain errors.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures: singular systems, diverging optimizers, non-finite values.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration content (unknown keys, out-of-range values).
struct ConfigError : DataError {
  explicit ConfigError(const std::string& msg) : DataError(msg) {}
};

}  // namespace faeclust

#pragma once

#include <stdexcept>
#include <string>

namespace protoshield {

inline constexpr const char* kVersion = "0.1.0";

// Process exit codes used by the CLI and asserted by the script tests.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

// Bad configuration, bad shapes declared by the caller, unknown keys.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data (wrong magic, truncated file, out-of-range label).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Misuse of an API contract (backward twice, scalar expected).
struct UsageError : std::logic_error {
    explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace protoshield

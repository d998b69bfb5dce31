// Copyright (c) 2026, the locallearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace locallearn {

/// Invalid or inconsistent user configuration (bad method string, K out of
/// range, architecture mismatch, ...). Maps to exit code 1 in the CLI.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem / file-format failures. Maps to exit code 2 in the CLI.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values encountered where finite ones are required.
/// Maps to exit code 3 in the CLI.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Contract violation: caller broke a documented precondition.
inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void check_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

inline void check_io(bool cond, const std::string& msg) {
  if (!cond) throw IoError(msg);
}

}  // namespace locallearn

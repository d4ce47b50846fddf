#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bodyfit {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using Mat3 = Eigen::Matrix3d;
using Face = std::array<int, 3>;

// Error categories map one-to-one onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input or violated precondition (exit code 2).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Divergence, non-finite values, degenerate numerical configuration (exit 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Unreadable/unwritable/malformed file (exit 4).
class IoError : public Error {
 public:
  using Error::Error;
};

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline LogLevel& log_level() {
  static LogLevel level = LogLevel::info;
  return level;
}

inline void log(LogLevel level, std::string_view msg) {
  if (level < log_level()) return;
  static constexpr std::array<const char*, 4> tags = {"debug", "info", "warn", "error"};
  std::cerr << "[bodyfit:" << tags[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void log_info(std::string_view msg) { log(LogLevel::info, msg); }
inline void log_warn(std::string_view msg) { log(LogLevel::warn, msg); }

}  // namespace bodyfit

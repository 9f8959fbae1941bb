#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace agi {

// Shape/operand validation failures. The message names the offending axes.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// NaN/Inf produced by an operation. Never silently propagated.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// User-facing configuration problems (CLI flags, config files, presets).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class BadMagicError : public IoError {
 public:
  explicit BadMagicError(const std::string& msg) : IoError(msg) {}
};

class TruncatedFileError : public IoError {
 public:
  explicit TruncatedFileError(const std::string& msg) : IoError(msg) {}
};

class BadDTypeError : public IoError {
 public:
  explicit BadDTypeError(const std::string& msg) : IoError(msg) {}
};

inline std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Integer floor/ceil division for possibly negative numerators, b > 0.
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
inline int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

// Nonnegative remainder, k > 0.
inline int mod_pos(int a, int k) {
  int r = a % k;
  return r < 0 ? r + k : r;
}
inline int64_t mod_pos64(int64_t a, int64_t k) {
  int64_t r = a % k;
  return r < 0 ? r + k : r;
}

}  // namespace agi

#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fanet {

// Base error for everything thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape/dimension mismatch between tensors or layers.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration, bad arguments, or API misuse.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset/file problems (missing pairs, bad palette colors, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required (e.g. NaN loss).
class NumericError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

}  // namespace fanet

#pragma once

#include <stdexcept>
#include <string>

namespace segaudit {

// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidInput(what);
}

inline void require_same_dims(int h1, int w1, int h2, int w2, const char* where) {
  if (h1 != h2 || w1 != w2) {
    throw DimensionMismatch(std::string(where) + ": raster " + std::to_string(h1) + "x" +
                            std::to_string(w1) + " vs " + std::to_string(h2) + "x" +
                            std::to_string(w2));
  }
}

}  // namespace detail
}  // namespace segaudit

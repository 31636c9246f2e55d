#ifndef LIFT_COMMON_HPP
#define LIFT_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lift {

// Error hierarchy. The CLI maps every subclass to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Integer grid coordinate: `i` runs along X (width), `j` along Y (height).
struct Coord {
  int32_t i = 0;
  int32_t j = 0;

  friend bool operator==(const Coord&, const Coord&) = default;
};

/// Canonical row-major order: by j first, then i.
struct CanonicalLess {
  bool operator()(const Coord& a, const Coord& b) const {
    return a.j != b.j ? a.j < b.j : a.i < b.i;
  }
};

}  // namespace lift

#endif  // LIFT_COMMON_HPP

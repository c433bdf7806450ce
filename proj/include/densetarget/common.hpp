#pragma once

#include <stdexcept>
#include <string>

namespace dt {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateQuad : Error {
  using Error::Error;
};

struct ShapeMismatch : Error {
  using Error::Error;
};

struct BoxOutOfBounds : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct SpecError : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct NonScalarLoss : Error {
  using Error::Error;
};

struct MissingGrad : Error {
  using Error::Error;
};

struct DivergenceError : Error {
  int epoch = -1;
  explicit DivergenceError(const std::string& msg, int epoch_ = -1)
      : Error(msg), epoch(epoch_) {}
};

struct ImageIdMismatch : Error {
  using Error::Error;
};

struct UnsortedInput : Error {
  using Error::Error;
};

}  // namespace dt

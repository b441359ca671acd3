#pragma once

#include <stdexcept>
#include <string>

namespace ajepa {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Array shapes that do not agree with each other or with a config.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class UnsupportedFormatError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// A single mask could not be placed within its try budget.
class SamplingFailure : public Error {
 public:
  using Error::Error;
};

// No mask plan could be built within the plan retry budget.
class UnsatisfiableConfigError : public Error {
 public:
  using Error::Error;
};

// Every attention key excluded, or an empty visible token set.
class DegenerateMaskError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace ajepa

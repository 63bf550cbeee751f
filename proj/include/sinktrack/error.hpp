#pragma once

#include <stdexcept>
#include <string>

namespace sinktrack {

// Every failure the library reports derives from Error so callers can catch
// one type; the subclasses let tests and the CLI tell the kinds apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or supplied where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class VocabError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class CacheError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public CacheError {
 public:
  using CacheError::CacheError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class PlanError : public Error {
 public:
  using Error::Error;
};

class TraceError : public Error {
 public:
  using Error::Error;
};

// weights-io failures
class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ShapeError : public FormatError {
 public:
  using FormatError::FormatError;
};

class AlignmentError : public FormatError {
 public:
  using FormatError::FormatError;
};

class MissingTensorError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace sinktrack

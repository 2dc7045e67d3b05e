#pragma once

#include <exception>
#include <stdexcept>
#include <string>

namespace nps {

/// Root of every error thrown by the library. The CLI maps subclasses to
/// exit codes, so new failure modes should derive from the closest one.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Two parameter containers disagree on tensor names, shapes or order.
class StructuralMismatch : public Error {
 public:
  using Error::Error;
};

enum class ParseErrorCode {
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kNonFinite,
  kMalformed,
};

const char* to_string(ParseErrorCode code) noexcept;

class ParseError : public Error {
 public:
  ParseError(ParseErrorCode code, const std::string& detail)
      : Error(std::string(to_string(code)) + (detail.empty() ? "" : ": " + detail)),
        code_(code) {}

  ParseErrorCode code() const noexcept { return code_; }

 private:
  ParseErrorCode code_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

/// Linear algebra or optimizer breakdown (e.g. a covariance that can no
/// longer be decomposed).
class NumericError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace nps

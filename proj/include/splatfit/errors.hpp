#pragma once

#include <stdexcept>
#include <string>

namespace splatfit {

// Base class for all pipeline errors; `kind` selects the process exit code.
class Error : public std::runtime_error {
 public:
  enum class Kind {
    InvalidInput,   // malformed specs, files, configs, dimension mismatches
    Numerical,      // non-finite values where finite ones are required
    EmptyResult,    // valid inputs that produce nothing (no surface, no overlap)
  };

  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct InvalidSpecError : Error {
  explicit InvalidSpecError(const std::string& msg) : Error(Kind::InvalidInput, msg) {}
};

struct DimensionMismatchError : Error {
  explicit DimensionMismatchError(const std::string& msg) : Error(Kind::InvalidInput, msg) {}
};

struct InsufficientViewsError : Error {
  explicit InsufficientViewsError(const std::string& msg) : Error(Kind::InvalidInput, msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(Kind::InvalidInput, msg) {}
};

struct NonFiniteGradientError : Error {
  explicit NonFiniteGradientError(const std::string& msg) : Error(Kind::Numerical, msg) {}
};

struct EmptySurfaceError : Error {
  explicit EmptySurfaceError(const std::string& msg) : Error(Kind::EmptyResult, msg) {}
};

struct EmptyPointSetError : Error {
  explicit EmptyPointSetError(const std::string& msg) : Error(Kind::EmptyResult, msg) {}
};

struct NoOverlapError : Error {
  explicit NoOverlapError(const std::string& msg) : Error(Kind::EmptyResult, msg) {}
};

}  // namespace splatfit

#pragma once

#include <stdexcept>
#include <string>

namespace misdetect {

// Base for every error raised by the library. The two subclasses map onto
// distinct process exit codes in the command-line tool.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data or arguments violate a documented precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A file could not be opened, read, or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace misdetect

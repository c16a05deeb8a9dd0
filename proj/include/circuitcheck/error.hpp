#pragma once

#include <stdexcept>
#include <string>

namespace circuitcheck {

// Base class for every error raised by the library. Callers that only want to
// report a message can catch this; std::exception catches everything else.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Raised by loaders; `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Raised when a random-circuit request cannot be satisfied under its restriction.
class SamplingError : public Error {
 public:
  using Error::Error;
};

}  // namespace circuitcheck

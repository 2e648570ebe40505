#ifndef PIGEONHOLE_ERROR_HPP
#define PIGEONHOLE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace pigeonhole {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Precondition violated by the caller (bad index, bad dimension, bad value).
class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// Subset or sieve sampling exhausted its retry budget.
class SamplingFailure : public Error {
public:
  using Error::Error;
};

/// Non-finite gradient or variance; the chain state is numerically unusable.
class DegenerateState : public Error {
public:
  using Error::Error;
};

/// Singular or otherwise failed linear algebra.
class LinearAlgebraError : public Error {
public:
  using Error::Error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

/// Table with no cells left (after filtering or pruning).
class EmptyTable : public Error {
public:
  using Error::Error;
};

/// Experiment configuration rejected during validation.
class ConfigError : public Error {
public:
  using Error::Error;
};

}  // namespace pigeonhole

#endif  // PIGEONHOLE_ERROR_HPP

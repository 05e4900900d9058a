#pragma once

#include <stdexcept>
#include <string>

namespace factguard {

// Base for every error raised by the library. Subclasses map one-to-one to
// the failure classes callers are expected to tell apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

// Malformed input data. `line()` is the 1-based row or line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line = -1) : Error(what), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

// Precondition broken by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  BackendError(const std::string& what, int status) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

class MockError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class LeakageError : public Error {
 public:
  using Error::Error;
};

class IncompleteAnnotationError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace factguard

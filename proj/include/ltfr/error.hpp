#pragma once

#include <stdexcept>
#include <string>

namespace ltfr {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape disagreement between operands (names the offending op/layer).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A value that must be finite is NaN or infinite.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Malformed input file (CSV parse failures carry the line number).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Referential-integrity failure: an id points at nothing.
class DanglingIdError : public Error {
 public:
  using Error::Error;
};

class DuplicateIdError : public Error {
 public:
  using Error::Error;
};

class UnknownIdError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Dataset/config validation failure not covered by a narrower class.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A required upstream artifact (embeddings, checkpoint) is missing.
class MissingUpstreamError : public Error {
 public:
  using Error::Error;
};

// Training loss went non-finite or ran away.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Evaluation embeddings do not cover all required entities.
class CoverageError : public Error {
 public:
  using Error::Error;
};

}  // namespace ltfr

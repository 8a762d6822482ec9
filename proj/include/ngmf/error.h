#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ngmf {

// Base for every error raised by the library. The CLI maps ConfigError to
// exit code 2 and every other Error to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: MIDI bytes, corpus text, vocab files, checkpoints.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or out-of-range settings (vocab target too small, n_max < 2...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a data contract (empty piece, unknown
// token, structure the tokenizer cannot represent).
class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace ngmf

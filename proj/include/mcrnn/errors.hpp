#pragma once

#include <stdexcept>
#include <string>

namespace mcrnn {

// Operand shapes disagree (never broadcast silently).
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Index or scalar argument outside its documented range.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Corpus, vocabulary or batch content is unusable.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf where a finite value is required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A tape, cache or checkpoint does not belong to the parameters it is used with.
struct ConsistencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration key or value.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace mcrnn

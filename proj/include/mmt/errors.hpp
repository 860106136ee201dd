#pragma once

#include <stdexcept>
#include <string>

namespace mmt {

// Error taxonomy. The CLI maps these onto exit codes:
// usage/config -> 1, data/parse/io -> 2, numeric -> 3.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shapes disagree (names both shapes in the message).
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A softmax/attention/pooling row has no valid position left.
struct MaskError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file content; message carries the line number.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values encountered during training/evaluation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mmt

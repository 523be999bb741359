#pragma once

#include <stdexcept>
#include <string>

namespace puzzle {

/// Bad input data: unreadable files, malformed formats, too-short audio.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated an operation's precondition (shape mismatch, bad argument).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace puzzle

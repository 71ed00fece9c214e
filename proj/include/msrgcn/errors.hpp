#pragma once

#include <stdexcept>
#include <string>

namespace msrgcn {

/// Incompatible matrix or sequence shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// API misuse: calling things in the wrong order or with missing state.
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Invalid configuration value.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad input data: unreadable files, non-finite coordinates.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed text input. `line()` is 1-based, 0 when unknown.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A loss or tensor went non-finite during training.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace msrgcn

#pragma once

#include <stdexcept>
#include <string>

namespace cirm {

/// Base for every error raised by the library. `code()` is a stable
/// machine-readable tag used by the CLI and the HTTP service.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message)
      : Error("shape_mismatch", message) {}
};

class ValueError : public Error {
 public:
  explicit ValueError(const std::string& message)
      : Error("invalid_value", message) {}
};

/// Operation not permitted in the current state (re-intervention,
/// zero-probability evidence, unfrozen base model, ...).
class StateError : public Error {
 public:
  explicit StateError(const std::string& message)
      : Error("invalid_state", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io_error", message) {}
};

}  // namespace cirm

#pragma once

#include <stdexcept>
#include <string>

namespace osdsr {

enum class ErrorKind {
  InvalidRange,
  OutOfRange,
  Numeric,
  ShapeMismatch,
  Divisibility,
  ZeroNorm,
  Io,
  Decode,
  Config,
  Missing,
};

const char* to_string(ErrorKind kind) noexcept;

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace osdsr

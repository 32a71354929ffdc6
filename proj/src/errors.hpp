#pragma once

#include <stdexcept>
#include <string>

namespace jfbctrl {

// Error categories map one-to-one onto the C API status codes.
enum class ErrorCode {
  InvalidArgument = 1,
  Config = 2,
  Io = 3,
  Numeric = 4,
  Runtime = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorCode::InvalidArgument, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorCode::Numeric, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorCode::Config, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCode::Io, what) {}
};

struct RuntimeError : Error {
  explicit RuntimeError(const std::string& what) : Error(ErrorCode::Runtime, what) {}
};

}  // namespace jfbctrl

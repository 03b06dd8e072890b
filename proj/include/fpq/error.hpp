#pragma once

#include <stdexcept>
#include <string>

namespace fpq {

/// Broad failure category; the CLI maps each to a distinct exit code.
enum class ErrorKind {
  kUsage = 1,
  kIo = 2,
  kValidation = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error ValidationError(const std::string& what) {
  return Error(ErrorKind::kValidation, what);
}
inline Error IoError(const std::string& what) {
  return Error(ErrorKind::kIo, what);
}
inline Error UsageError(const std::string& what) {
  return Error(ErrorKind::kUsage, what);
}

/// Failures while decoding a tensor container. Each cause is distinguishable.
class ContainerError : public Error {
 public:
  enum class Code {
    kBadMagic,
    kVersionMismatch,
    kTruncated,
    kShapeMismatch,
    kBadDtype,
  };

  ContainerError(Code code, const std::string& what)
      : Error(ErrorKind::kValidation, what), code_(code) {}

  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

const char* to_string(ContainerError::Code code);

}  // namespace fpq

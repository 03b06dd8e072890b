#include "fpq/error.hpp"

namespace fpq {

const char* to_string(ContainerError::Code code) {
  switch (code) {
    case ContainerError::Code::kBadMagic:
      return "bad magic";
    case ContainerError::Code::kVersionMismatch:
      return "version mismatch";
    case ContainerError::Code::kTruncated:
      return "truncated payload";
    case ContainerError::Code::kShapeMismatch:
      return "shape/length mismatch";
    case ContainerError::Code::kBadDtype:
      return "unsupported dtype";
  }
  return "unknown";
}

}  // namespace fpq

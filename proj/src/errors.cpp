#include "netslice/errors.hpp"

namespace netslice {

const char* category_name(ErrorCategory c) noexcept {
  switch (c) {
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Dimension: return "dimension";
    case ErrorCategory::Domain: return "domain";
    case ErrorCategory::Action: return "action";
    case ErrorCategory::Numeric: return "numeric";
    case ErrorCategory::Contract: return "contract";
    case ErrorCategory::EmptySet: return "empty-set";
    case ErrorCategory::Singularity: return "singularity";
    case ErrorCategory::IncompatibleArchitecture: return "incompatible-architecture";
    case ErrorCategory::Dependency: return "dependency";
    case ErrorCategory::Io: return "io";
  }
  return "unknown";
}

}  // namespace netslice

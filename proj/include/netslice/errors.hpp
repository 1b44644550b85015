#pragma once

#include <stdexcept>
#include <string>

namespace netslice {

enum class ErrorCategory {
  Config = 2,
  Dimension = 3,
  Domain = 4,
  Action = 5,
  Numeric = 6,
  Contract = 7,
  EmptySet = 8,
  Singularity = 9,
  IncompatibleArchitecture = 10,
  Dependency = 11,
  Io = 12,
};

const char* category_name(ErrorCategory c) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define NETSLICE_DEFINE_ERROR(Name, Cat)                                   \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorCategory::Cat, what) {} \
  };

NETSLICE_DEFINE_ERROR(ConfigError, Config)
NETSLICE_DEFINE_ERROR(DimensionError, Dimension)
NETSLICE_DEFINE_ERROR(DomainError, Domain)
NETSLICE_DEFINE_ERROR(ActionError, Action)
NETSLICE_DEFINE_ERROR(ContractError, Contract)
NETSLICE_DEFINE_ERROR(EmptySetError, EmptySet)
NETSLICE_DEFINE_ERROR(SingularityError, Singularity)
NETSLICE_DEFINE_ERROR(IncompatibleArchitectureError, IncompatibleArchitecture)
NETSLICE_DEFINE_ERROR(DependencyError, Dependency)
NETSLICE_DEFINE_ERROR(IoError, Io)

#undef NETSLICE_DEFINE_ERROR

/// Raised on non-finite losses or gradients. `index` is the offending layer
/// or epoch, -1 when not applicable.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, int index = -1)
      : Error(ErrorCategory::Numeric, what), index_(index) {}
  int index() const noexcept { return index_; }

 private:
  int index_;
};

}  // namespace netslice

#pragma once

#include <stdexcept>
#include <string>

namespace atmgcn {

// Base of every error the library throws. The CLI maps UsageError to exit
// code 2 and everything else to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ATMGCN_DEFINE_ERROR(name)          \
  class name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

ATMGCN_DEFINE_ERROR(DimensionError);
ATMGCN_DEFINE_ERROR(DomainError);
ATMGCN_DEFINE_ERROR(UsageError);
ATMGCN_DEFINE_ERROR(InputError);
ATMGCN_DEFINE_ERROR(ConfigError);
ATMGCN_DEFINE_ERROR(FormatError);
ATMGCN_DEFINE_ERROR(ValidationError);
ATMGCN_DEFINE_ERROR(TrainingError);
ATMGCN_DEFINE_ERROR(ProtocolError);

#undef ATMGCN_DEFINE_ERROR

}  // namespace atmgcn

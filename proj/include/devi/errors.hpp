#pragma once

#include <stdexcept>
#include <string>

namespace devi {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define DEVI_DEFINE_ERROR(Name)                         \
  struct Name : Error {                                 \
    explicit Name(const std::string& msg = #Name)       \
        : Error(std::string(#Name) + ": " + msg) {}     \
  };

DEVI_DEFINE_ERROR(BehindCamera)
DEVI_DEFINE_ERROR(EmptySet)
DEVI_DEFINE_ERROR(EmptySource)
DEVI_DEFINE_ERROR(ShapeMismatch)
DEVI_DEFINE_ERROR(LengthMismatch)
DEVI_DEFINE_ERROR(NonFiniteInput)
DEVI_DEFINE_ERROR(NoVisibleVertices)
DEVI_DEFINE_ERROR(InvalidScenario)
DEVI_DEFINE_ERROR(NonFiniteState)
DEVI_DEFINE_ERROR(PenetrationAtReset)
DEVI_DEFINE_ERROR(NonFiniteLoss)
DEVI_DEFINE_ERROR(DivergedTraining)
DEVI_DEFINE_ERROR(ParseError)
DEVI_DEFINE_ERROR(IoError)

#undef DEVI_DEFINE_ERROR

}  // namespace devi

#pragma once

#include <stdexcept>
#include <string>

namespace mixdiff {

// Every failure raised by the library derives from Error so callers can catch
// one type at the CLI boundary.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MIXDIFF_DEFINE_ERROR(Name)          \
  class Name : public Error {               \
   public:                                  \
    explicit Name(const std::string& what)  \
        : Error(#Name ": " + what) {}       \
  };

MIXDIFF_DEFINE_ERROR(InvalidObject)
MIXDIFF_DEFINE_ERROR(InvalidFloor)
MIXDIFF_DEFINE_ERROR(InvalidSchedule)
MIXDIFF_DEFINE_ERROR(StepOutOfRange)
MIXDIFF_DEFINE_ERROR(InvalidInput)
MIXDIFF_DEFINE_ERROR(UnreachableState)
MIXDIFF_DEFINE_ERROR(InvalidState)
MIXDIFF_DEFINE_ERROR(TrainingDiverged)
MIXDIFF_DEFINE_ERROR(UnknownLabel)
MIXDIFF_DEFINE_ERROR(InsufficientData)
MIXDIFF_DEFINE_ERROR(ParseError)
MIXDIFF_DEFINE_ERROR(IoError)

#undef MIXDIFF_DEFINE_ERROR

}  // namespace mixdiff

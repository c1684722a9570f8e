#pragma once

#include <stdexcept>
#include <string>

namespace driftfb {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DRIFTFB_DEFINE_ERROR(Name)        \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

DRIFTFB_DEFINE_ERROR(NotFound);
DRIFTFB_DEFINE_ERROR(ValidationError);
DRIFTFB_DEFINE_ERROR(DimensionError);
DRIFTFB_DEFINE_ERROR(NumericError);
DRIFTFB_DEFINE_ERROR(SingularModelError);
DRIFTFB_DEFINE_ERROR(IoError);
DRIFTFB_DEFINE_ERROR(EmptyCorpusError);
DRIFTFB_DEFINE_ERROR(EmptyVocabularyError);
DRIFTFB_DEFINE_ERROR(InsufficientDataError);
DRIFTFB_DEFINE_ERROR(EmptySliceError);
DRIFTFB_DEFINE_ERROR(NoResultsError);

#undef DRIFTFB_DEFINE_ERROR

}  // namespace driftfb

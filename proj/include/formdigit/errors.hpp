#pragma once

#include <stdexcept>
#include <string>

namespace formdigit {

// Base for every recoverable failure raised by the library. The CLI maps
// these to exit code 1 with the message on stderr.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define FORMDIGIT_ERROR(Name)                                         \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

// imaging / io
FORMDIGIT_ERROR(ImageIoError);
// template
FORMDIGIT_ERROR(MalformedDigits);
FORMDIGIT_ERROR(InvalidTemplate);
// registration
FORMDIGIT_ERROR(NoFeatures);
FORMDIGIT_ERROR(TooFewMatches);
FORMDIGIT_ERROR(DegenerateConfiguration);
// neuralnet
FORMDIGIT_ERROR(ShapeMismatch);
FORMDIGIT_ERROR(StaleCache);
FORMDIGIT_ERROR(CheckpointError);
// models
FORMDIGIT_ERROR(NoValidTriplets);
// datasets
FORMDIGIT_ERROR(BadMagic);
FORMDIGIT_ERROR(TruncatedFile);
FORMDIGIT_ERROR(CountMismatch);
// pipeline / review
FORMDIGIT_ERROR(UnknownCell);
FORMDIGIT_ERROR(UnknownItem);
FORMDIGIT_ERROR(AlreadyLabeled);

#undef FORMDIGIT_ERROR

}  // namespace formdigit

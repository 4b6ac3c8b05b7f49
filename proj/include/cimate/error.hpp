#pragma once

#include <stdexcept>
#include <string>

namespace cimate {

// Broad category, used by the CLI to pick an exit code.
enum class ErrorCategory { kUsage, kData, kNumeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define CIMATE_DEFINE_ERROR(Name, Category)                      \
  class Name : public Error {                                    \
   public:                                                       \
    explicit Name(const std::string& what)                       \
        : Error(ErrorCategory::Category, #Name ": " + what) {}   \
  }

// corpus
CIMATE_DEFINE_ERROR(MalformedDocument, kData);
CIMATE_DEFINE_ERROR(EmptyDocument, kData);
CIMATE_DEFINE_ERROR(NegativeWindow, kData);
CIMATE_DEFINE_ERROR(InsufficientSpan, kData);
// textproc
CIMATE_DEFINE_ERROR(EmptyCorpus, kData);
CIMATE_DEFINE_ERROR(FirstSegmentTooLong, kData);
CIMATE_DEFINE_ERROR(HeadingTooLong, kData);
// nn
CIMATE_DEFINE_ERROR(SequenceTooLong, kData);
CIMATE_DEFINE_ERROR(EmptySequence, kData);
CIMATE_DEFINE_ERROR(NonFiniteGradient, kNumeric);
// models
CIMATE_DEFINE_ERROR(EmptyInput, kData);
CIMATE_DEFINE_ERROR(NoSections, kData);
// trainer
CIMATE_DEFINE_ERROR(DivergedLoss, kNumeric);
// eval
CIMATE_DEFINE_ERROR(DegenerateInput, kData);
CIMATE_DEFINE_ERROR(MissingSplit, kData);
// configuration and preconditions
CIMATE_DEFINE_ERROR(InvalidArgument, kUsage);

#undef CIMATE_DEFINE_ERROR

}  // namespace cimate

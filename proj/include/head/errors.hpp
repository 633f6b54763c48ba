#pragma once

#include <stdexcept>
#include <string>

namespace head {

// Input or configuration rejected before any work ran. Maps to exit code 1.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Failure while doing the work (I/O, numerics, budgets). Maps to exit code 2.
class RuntimeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define HEAD_DEFINE_ERROR(Name, Base)                                          \
  class Name : public Base {                                                   \
  public:                                                                      \
    explicit Name(const std::string& what) : Base(#Name ": " + what) {}        \
  };

HEAD_DEFINE_ERROR(GrammarError, ValidationError)
HEAD_DEFINE_ERROR(UnknownObject, ValidationError)
HEAD_DEFINE_ERROR(EmptyTargets, ValidationError)
HEAD_DEFINE_ERROR(EmptyCatalog, ValidationError)
HEAD_DEFINE_ERROR(InvalidT, ValidationError)
HEAD_DEFINE_ERROR(InvalidArgument, ValidationError)
HEAD_DEFINE_ERROR(MissingCapture, ValidationError)
HEAD_DEFINE_ERROR(DimensionMismatch, ValidationError)
HEAD_DEFINE_ERROR(DegenerateLabels, ValidationError)
HEAD_DEFINE_ERROR(MissingReport, ValidationError)
HEAD_DEFINE_ERROR(NeverAccepts, ValidationError)
HEAD_DEFINE_ERROR(UsageError, ValidationError)

HEAD_DEFINE_ERROR(IoError, RuntimeError)
HEAD_DEFINE_ERROR(DegenerateVariance, RuntimeError)
HEAD_DEFINE_ERROR(NonFiniteLoss, RuntimeError)
HEAD_DEFINE_ERROR(TrialBudgetExceeded, RuntimeError)
HEAD_DEFINE_ERROR(RestartLimitExceeded, RuntimeError)

#undef HEAD_DEFINE_ERROR

}  // namespace head

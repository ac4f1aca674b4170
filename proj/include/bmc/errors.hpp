#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bmc {

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  cap_exceeded,
  assumption_violated,
  not_positive_definite,
  max_iters_exceeded,
  gradient_undefined,
  fold_infeasible,
  infeasible_realization,
  parse_error,
  io_error,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define BMC_DEFINE_ERROR(Name, Code)                                            \
  class Name : public Error {                                                   \
   public:                                                                      \
    explicit Name(const std::string& what) : Error(ErrorCode::Code, what) {}    \
  };

BMC_DEFINE_ERROR(InvalidArgument, invalid_argument)
BMC_DEFINE_ERROR(DimensionMismatch, dimension_mismatch)
BMC_DEFINE_ERROR(CapExceeded, cap_exceeded)
BMC_DEFINE_ERROR(AssumptionViolated, assumption_violated)
BMC_DEFINE_ERROR(NotPositiveDefinite, not_positive_definite)
BMC_DEFINE_ERROR(MaxItersExceeded, max_iters_exceeded)
BMC_DEFINE_ERROR(GradientUndefined, gradient_undefined)
BMC_DEFINE_ERROR(FoldInfeasible, fold_infeasible)
BMC_DEFINE_ERROR(InfeasibleRealization, infeasible_realization)
BMC_DEFINE_ERROR(IoError, io_error)

#undef BMC_DEFINE_ERROR

/// Malformed input; `line` is 1-based.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(ErrorCode::parse_error, "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace bmc

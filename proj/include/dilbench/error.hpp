#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dilbench {

enum class ErrorKind {
  ShapeMismatch,
  DomainError,
  InvalidRate,
  NotScalar,
  EmptySequence,
  NotNormalized,
  MissingGradient,
  EmptySource,
  NoBuffer,
  InvalidPeriod,
  LengthMismatch,
  InvalidProfile,
  EmptyCohort,
  IoFailure,
  MalformedFile,
  SchemaMismatch,
  TooShort,
  SingleClass,
  NoPositives,
  AllColumnsDegenerate,
  EmptyInput,
  NoResults,
  InvalidConfig,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

  // Errors caused by bad input data or files rather than by the program.
  [[nodiscard]] bool is_data_error() const noexcept;

 private:
  ErrorKind kind_;
};

}  // namespace dilbench

#include "dilbench/error.hpp"

namespace dilbench {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::InvalidRate: return "InvalidRate";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::EmptySequence: return "EmptySequence";
    case ErrorKind::NotNormalized: return "NotNormalized";
    case ErrorKind::MissingGradient: return "MissingGradient";
    case ErrorKind::EmptySource: return "EmptySource";
    case ErrorKind::NoBuffer: return "NoBuffer";
    case ErrorKind::InvalidPeriod: return "InvalidPeriod";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::InvalidProfile: return "InvalidProfile";
    case ErrorKind::EmptyCohort: return "EmptyCohort";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::MalformedFile: return "MalformedFile";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::NoPositives: return "NoPositives";
    case ErrorKind::AllColumnsDegenerate: return "AllColumnsDegenerate";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::NoResults: return "NoResults";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

bool Error::is_data_error() const noexcept {
  switch (kind_) {
    case ErrorKind::InvalidProfile:
    case ErrorKind::EmptyCohort:
    case ErrorKind::IoFailure:
    case ErrorKind::MalformedFile:
    case ErrorKind::SchemaMismatch:
    case ErrorKind::EmptySource:
    case ErrorKind::NoResults:
    case ErrorKind::InvalidConfig:
      return true;
    default:
      return false;
  }
}

}  // namespace dilbench

#include "tibscan/error.hpp"

namespace tibscan {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnsupportedLanguage: return "UnsupportedLanguage";
    case ErrorCode::UnreadableFile: return "UnreadableFile";
    case ErrorCode::WholeFileParseFailure: return "WholeFileParseFailure";
    case ErrorCode::NoCandidates: return "NoCandidates";
    case ErrorCode::InsufficientCandidates: return "InsufficientCandidates";
    case ErrorCode::ContextTooLong: return "ContextTooLong";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::BackendExhausted: return "BackendExhausted";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::DegenerateStage: return "DegenerateStage";
    case ErrorCode::MissingPlaceholder: return "MissingPlaceholder";
    case ErrorCode::Io: return "Io";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
  }
  return "Unknown";
}

}  // namespace tibscan

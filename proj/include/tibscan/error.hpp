#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tibscan {

enum class ErrorCode {
  InvalidArgument,
  UnsupportedLanguage,
  UnreadableFile,
  WholeFileParseFailure,
  NoCandidates,
  InsufficientCandidates,
  ContextTooLong,
  BackendUnavailable,
  BackendExhausted,
  SchemaViolation,
  RateLimited,
  DegenerateStage,
  MissingPlaceholder,
  Io,
  EmptyInput,
  BudgetExceeded,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by chat backends when the provider throttles; carries the advised wait.
class RateLimitedError : public Error {
 public:
  RateLimitedError(const std::string& message, double retry_after_seconds)
      : Error(ErrorCode::RateLimited, message), retry_after_(retry_after_seconds) {}

  double retry_after_seconds() const noexcept { return retry_after_; }

 private:
  double retry_after_;
};

}  // namespace tibscan

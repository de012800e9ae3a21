#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "tibscan/gateway.hpp"
#include "tibscan/source.hpp"

namespace tibscan {

/// True when `preceding + token_text` could begin a lexical token of `kind`.
/// `preceding` is the text already accepted for the masked position.
bool validate_token(std::string_view token_text, CodeTokenKind kind, Language language,
                    std::string_view preceding = {});

struct ConsistencyConfig {
  double prob_thresh = 0.9;
  std::size_t rank_thresh = 1;
  std::size_t k = 10;
  std::size_t max_steps = 16;

  /// Throws InvalidArgument when out of range.
  void validate() const;
};

enum class VerdictReason {
  Matched,        // original reproduced
  ConfidentDeviation,  // a valid non-matching candidate above prob_thresh
  RankExceeded,   // rank_sum > rank_thresh
  Exhausted,      // no valid candidate at a step
  StepCap,        // max_steps reached
};

std::string_view to_string(VerdictReason reason) noexcept;

struct Deviation {
  std::size_t step = 0;  // 1-based
  std::string token;
  double prob = 0.0;
};

struct ConsistencyVerdict {
  bool consistent = false;
  std::size_t rank_sum = 0;
  std::optional<Deviation> deviation;
  std::size_t steps_taken = 0;
  VerdictReason reason = VerdictReason::Matched;
};

ConsistencyVerdict check_consistency(std::shared_ptr<const InfillingTask> task,
                                     CompletionBackend& backend, const ConsistencyConfig& cfg = {});

}  // namespace tibscan

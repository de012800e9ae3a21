#include "tibscan/consistency.hpp"

#include "tibscan/error.hpp"
#include "tibscan/lexicon.hpp"
#include "tibscan/log.hpp"

namespace tibscan {

bool validate_token(std::string_view token_text, CodeTokenKind kind, Language language,
                    std::string_view preceding) {
  if (token_text.empty()) return false;
  std::string accumulated(preceding);
  accumulated += token_text;
  switch (kind) {
    case CodeTokenKind::VariableUse:
    case CodeTokenKind::FunctionCall:
      return lexicon::is_identifier_prefix(accumulated, language);
    case CodeTokenKind::Operator:
      return lexicon::is_operator_prefix(accumulated, language);
    case CodeTokenKind::Literal:
      return lexicon::is_literal_prefix(accumulated, language);
  }
  return false;
}

void ConsistencyConfig::validate() const {
  if (!(prob_thresh > 0.0 && prob_thresh < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "prob_thresh must lie in (0, 1)");
  }
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be positive");
  if (max_steps == 0) throw Error(ErrorCode::InvalidArgument, "max_steps must be positive");
}

std::string_view to_string(VerdictReason reason) noexcept {
  switch (reason) {
    case VerdictReason::Matched: return "matched";
    case VerdictReason::ConfidentDeviation: return "confident_deviation";
    case VerdictReason::RankExceeded: return "rank_exceeded";
    case VerdictReason::Exhausted: return "exhausted";
    case VerdictReason::StepCap: return "step_cap";
  }
  return "";
}

ConsistencyVerdict check_consistency(std::shared_ptr<const InfillingTask> task,
                                     CompletionBackend& backend, const ConsistencyConfig& cfg) {
  cfg.validate();
  const CodeTokenKind kind = task->kind;
  const Language language = task->unit ? task->unit->language : Language::Python;
  const std::string original = task->original;
  GenerationSession session(std::move(task));
  std::string_view left = original;
  std::string accepted;

  ConsistencyVerdict v;
  while (!left.empty()) {
    if (v.steps_taken >= cfg.max_steps) {
      log::debug("task ", session.task().task_id, ": step cap reached");
      v.reason = VerdictReason::StepCap;
      return v;
    }
    const PredictionStep step = backend.next_step(session, cfg.k);
    ++v.steps_taken;
    bool any_valid = false;
    for (const Candidate& c : step.candidates) {
      if (!validate_token(c.text, kind, language, accepted)) continue;
      any_valid = true;
      if (left.starts_with(c.text)) {
        left.remove_prefix(c.text.size());
        accepted += c.text;
        session = session.accept(c.text);
        break;
      }
      if (c.prob > cfg.prob_thresh) {
        v.deviation = Deviation{v.steps_taken, c.text, c.prob};
        v.reason = VerdictReason::ConfidentDeviation;
        return v;
      }
      ++v.rank_sum;
      v.deviation = Deviation{v.steps_taken, c.text, c.prob};
    }
    if (!any_valid) {
      v.deviation = Deviation{v.steps_taken, std::string(), 0.0};
      v.reason = VerdictReason::Exhausted;
      return v;
    }
    if (v.rank_sum > cfg.rank_thresh) {
      v.reason = VerdictReason::RankExceeded;
      return v;
    }
  }
  v.consistent = true;
  v.deviation.reset();
  v.reason = VerdictReason::Matched;
  return v;
}

}  // namespace tibscan

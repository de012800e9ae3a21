#pragma once

#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tibscan/source.hpp"

namespace tibscan {

using json = nlohmann::json;

struct Candidate {
  std::string text;
  double prob = 0.0;
  friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// Ranked next-token alternatives, most probable first.
struct PredictionStep {
  std::vector<Candidate> candidates;
};

/// Orders by probability descending, then text, and clamps probabilities into (0, 1].
void normalize_step(PredictionStep& step, std::size_t k);

/// Immutable generation state: the task plus the text tokens accepted so far.
class GenerationSession {
 public:
  explicit GenerationSession(std::shared_ptr<const InfillingTask> task);

  const InfillingTask& task() const noexcept { return *task_; }
  const std::shared_ptr<const InfillingTask>& task_ptr() const noexcept { return task_; }
  const std::vector<std::string>& forced() const noexcept { return forced_; }
  std::string forced_text() const;
  static constexpr double temperature() noexcept { return 0.0; }

  /// Returns a copy with `token` appended; this session is unchanged.
  GenerationSession accept(std::string token) const;

 private:
  std::shared_ptr<const InfillingTask> task_;
  std::vector<std::string> forced_;
};

inline GenerationSession force_accept(const GenerationSession& session, std::string token) {
  return session.accept(std::move(token));
}

// ---------------------------------------------------------------------------
// profiles

struct BackendCapabilities {
  bool completion_logprobs = false;
  bool fim = false;
  bool chat_json = false;
};

struct FimSentinels {
  std::string prefix = "<PRE> ";
  std::string suffix = " <SUF>";
  std::string middle = " <MID>";
};

struct BackendProfile {
  std::string name;
  std::string kind = "http";  // "http" or "scripted"
  std::string base_url;
  std::string model;
  std::string api_key_env_var;
  BackendCapabilities capabilities;
  std::optional<FimSentinels> sentinels;
  std::size_t max_context_tokens = 4000;
  double price_per_call = 0.0;
  std::filesystem::path fixture;  // scripted backends
  std::string completions_path = "/v1/completions";
  std::string chat_path = "/v1/chat/completions";
  unsigned max_concurrency = 4;
  unsigned max_retries = 3;
  double backoff_seconds = 0.5;
  double timeout_seconds = 60.0;
};

/// Relative fixture paths are resolved against `base_dir`.
BackendProfile parse_profile(const json& j, const std::filesystem::path& base_dir = {});
json profile_to_json(const BackendProfile& profile);

/// Bounds concurrent requests against one backend.
class RateLimiter {
 public:
  explicit RateLimiter(unsigned permits) : available_(permits ? permits : 1) {}

  class Permit {
   public:
    explicit Permit(RateLimiter& limiter) : limiter_(&limiter) { limiter_->acquire(); }
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;
    ~Permit() { limiter_->release(); }

   private:
    RateLimiter* limiter_;
  };

  void acquire();
  void release();

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  unsigned available_;
};

// ---------------------------------------------------------------------------
// stepwise completion

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  /// Top-k candidates for the next text token after prefix + forced
  /// (+ suffix for infilling-capable backends).
  virtual PredictionStep next_step(const GenerationSession& session, std::size_t k) = 0;
  virtual const BackendProfile& profile() const noexcept = 0;
};

/// Serves programmed step tables from a JSON fixture:
///   {"tables": {"<task_id>": [{"forced": "", "candidates": [["tok", 0.9], ...]}, ...]},
///    "default": "echo" | "exhausted" | "error"}
/// A session is matched on its concatenated forced text. Unmatched sessions
/// fall back to the default: "echo" offers the unmatched rest of the original
/// at probability 0.99.
class ScriptedCompletionBackend final : public CompletionBackend {
 public:
  ScriptedCompletionBackend(BackendProfile profile, const json& fixture);
  static std::unique_ptr<ScriptedCompletionBackend> from_profile(BackendProfile profile);

  PredictionStep next_step(const GenerationSession& session, std::size_t k) override;
  const BackendProfile& profile() const noexcept override { return profile_; }

 private:
  struct Row {
    std::string forced;
    PredictionStep step;
  };
  BackendProfile profile_;
  std::unordered_map<std::string, std::vector<Row>> tables_;
  std::string default_mode_ = "echo";
};

/// OpenAI-compatible /completions client. Forced continuation is realised by
/// resubmitting the prompt with the accepted text appended and asking for a
/// single new token with top-k logprobs.
class HttpCompletionBackend final : public CompletionBackend {
 public:
  explicit HttpCompletionBackend(BackendProfile profile);

  PredictionStep next_step(const GenerationSession& session, std::size_t k) override;
  const BackendProfile& profile() const noexcept override { return profile_; }

  /// The exact prompt text sent for a session.
  std::string build_prompt(const GenerationSession& session) const;

 private:
  BackendProfile profile_;
  RateLimiter limiter_;
};

std::unique_ptr<CompletionBackend> make_completion_backend(const BackendProfile& profile);

// ---------------------------------------------------------------------------
// structured chat

struct ChatMessage {
  std::string role;
  std::string content;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// Raw assistant content for the conversation so far.
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
  virtual const BackendProfile& profile() const noexcept = 0;
};

/// Rules are tried in order against the first user message of the
/// conversation (the one carrying the code):
///   {"rules": [{"contains": "...", "round": 2, "attempt": 1,
///               "response": {...} | "raw": "..." | "rate_limited": 1.5}],
///    "default": {"bugs": []}}
/// `round` counts user prompts excluding format nudges; `attempt` is 2 on
/// the retry after a nudge. Both are optional.
class ScriptedChatBackend final : public ChatBackend {
 public:
  ScriptedChatBackend(BackendProfile profile, const json& fixture);
  static std::unique_ptr<ScriptedChatBackend> from_profile(BackendProfile profile);

  std::string complete(const std::vector<ChatMessage>& messages) override;
  const BackendProfile& profile() const noexcept override { return profile_; }

 private:
  BackendProfile profile_;
  json rules_;
  json default_;
};

class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(BackendProfile profile);
  std::string complete(const std::vector<ChatMessage>& messages) override;
  const BackendProfile& profile() const noexcept override { return profile_; }

 private:
  BackendProfile profile_;
  RateLimiter limiter_;
};

std::unique_ptr<ChatBackend> make_chat_backend(const BackendProfile& profile);

/// Properties requested in a round. code_line and explanation are always
/// mandatory and are implied.
struct PropertySchema {
  std::vector<std::string> selective;

  std::vector<std::string> properties() const;
  bool requests(std::string_view property) const;
  /// The wire-level JSON schema description sent along with the prompt.
  json to_json_schema() const;
};

struct ChatRound {
  std::string user_prompt;
  std::string raw_response;
  json response;  // validated {"bugs": [...]}
  PropertySchema schema;
};

struct ChatExchange {
  std::string system;
  std::vector<ChatRound> rounds;
  std::string model_id;

  std::vector<ChatMessage> messages() const;
};

/// Text sent after a response fails validation.
extern const std::string_view kFormatNudge;

/// Parses and validates a response against the round schema. Accepts an
/// object {"bugs": [...]} or a bare array, tolerates a fenced code block, and
/// strips unrequested properties. Throws SchemaViolation.
json validate_round_response(std::string_view raw, const PropertySchema& schema);

/// Sends one round, retrying once with a format nudge on invalid output.
/// Appends the accepted round to `exchange` and returns its response.
const json& chat_round(ChatExchange& exchange, ChatBackend& backend, std::string user_prompt,
                       const PropertySchema& schema);

}  // namespace tibscan

#include "tibscan/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "http_client.hpp"
#include "tibscan/error.hpp"
#include "tibscan/log.hpp"
#include "tibscan/text.hpp"

namespace tibscan {

void normalize_step(PredictionStep& step, std::size_t k) {
  auto& c = step.candidates;
  c.erase(std::remove_if(c.begin(), c.end(),
                         [](const Candidate& x) { return !(x.prob > 0.0) || x.text.empty(); }),
          c.end());
  for (auto& x : c) x.prob = std::min(x.prob, 1.0);
  std::stable_sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
    if (a.prob != b.prob) return a.prob > b.prob;
    return a.text < b.text;
  });
  if (k > 0 && c.size() > k) c.resize(k);
}

GenerationSession::GenerationSession(std::shared_ptr<const InfillingTask> task)
    : task_(std::move(task)) {
  if (!task_) throw Error(ErrorCode::InvalidArgument, "session without task");
}

std::string GenerationSession::forced_text() const {
  std::string out;
  for (const auto& t : forced_) out += t;
  return out;
}

GenerationSession GenerationSession::accept(std::string token) const {
  GenerationSession next = *this;
  next.forced_.push_back(std::move(token));
  return next;
}

// ---------------------------------------------------------------------------
// profiles

BackendProfile parse_profile(const json& j, const std::filesystem::path& base_dir) {
  BackendProfile p;
  p.name = j.at("name").get<std::string>();
  p.kind = j.value("kind", p.kind);
  if (p.kind != "http" && p.kind != "scripted") {
    throw Error(ErrorCode::InvalidArgument, "profile " + p.name + ": unknown kind '" + p.kind + "'");
  }
  p.base_url = j.value("base_url", "");
  p.model = j.value("model", "");
  p.api_key_env_var = j.value("api_key_env_var", "");
  if (auto it = j.find("capabilities"); it != j.end()) {
    if (it->is_array()) {
      for (const auto& cap : *it) {
        const auto s = cap.get<std::string>();
        if (s == "completion_logprobs") p.capabilities.completion_logprobs = true;
        else if (s == "fim") p.capabilities.fim = true;
        else if (s == "chat_json") p.capabilities.chat_json = true;
        else throw Error(ErrorCode::InvalidArgument, "profile " + p.name + ": unknown capability " + s);
      }
    } else {
      p.capabilities.completion_logprobs = it->value("completion_logprobs", false);
      p.capabilities.fim = it->value("fim", false);
      p.capabilities.chat_json = it->value("chat_json", false);
    }
  }
  if (auto it = j.find("sentinels"); it != j.end() && !it->is_null()) {
    FimSentinels s;
    s.prefix = it->value("prefix", s.prefix);
    s.suffix = it->value("suffix", s.suffix);
    s.middle = it->value("middle", s.middle);
    p.sentinels = s;
  }
  p.max_context_tokens = j.value("max_context_tokens", p.max_context_tokens);
  p.price_per_call = j.value("price_per_call", p.price_per_call);
  if (auto it = j.find("fixture"); it != j.end()) {
    std::filesystem::path f = it->get<std::string>();
    p.fixture = f.is_relative() && !base_dir.empty() ? base_dir / f : f;
  }
  p.completions_path = j.value("completions_path", p.completions_path);
  p.chat_path = j.value("chat_path", p.chat_path);
  p.max_concurrency = j.value("max_concurrency", p.max_concurrency);
  p.max_retries = j.value("max_retries", p.max_retries);
  p.backoff_seconds = j.value("backoff_seconds", p.backoff_seconds);
  p.timeout_seconds = j.value("timeout_seconds", p.timeout_seconds);
  if (p.kind == "http" && p.base_url.empty()) {
    throw Error(ErrorCode::InvalidArgument, "profile " + p.name + ": base_url required");
  }
  if (p.kind == "scripted" && p.fixture.empty()) {
    throw Error(ErrorCode::InvalidArgument, "profile " + p.name + ": fixture required");
  }
  return p;
}

json profile_to_json(const BackendProfile& p) {
  json caps = json::array();
  if (p.capabilities.completion_logprobs) caps.push_back("completion_logprobs");
  if (p.capabilities.fim) caps.push_back("fim");
  if (p.capabilities.chat_json) caps.push_back("chat_json");
  json j = {{"name", p.name},
            {"kind", p.kind},
            {"base_url", p.base_url},
            {"model", p.model},
            {"api_key_env_var", p.api_key_env_var},
            {"capabilities", caps},
            {"max_context_tokens", p.max_context_tokens},
            {"price_per_call", p.price_per_call}};
  if (p.sentinels) {
    j["sentinels"] = {{"prefix", p.sentinels->prefix},
                      {"suffix", p.sentinels->suffix},
                      {"middle", p.sentinels->middle}};
  }
  if (!p.fixture.empty()) j["fixture"] = p.fixture.generic_string();
  return j;
}

void RateLimiter::acquire() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return available_ > 0; });
  --available_;
}

void RateLimiter::release() {
  {
    std::lock_guard lock(mutex_);
    ++available_;
  }
  cv_.notify_one();
}

namespace {

json load_fixture(const BackendProfile& profile) {
  std::ifstream in(profile.fixture);
  if (!in) {
    throw Error(ErrorCode::Io, "profile " + profile.name + ": cannot open fixture " +
                                   profile.fixture.string());
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument,
                "profile " + profile.name + ": bad fixture: " + std::string(e.what()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// scripted completion

ScriptedCompletionBackend::ScriptedCompletionBackend(BackendProfile profile, const json& fixture)
    : profile_(std::move(profile)) {
  default_mode_ = fixture.value("default", default_mode_);
  if (default_mode_ != "echo" && default_mode_ != "exhausted" && default_mode_ != "error") {
    throw Error(ErrorCode::InvalidArgument, "scripted default must be echo, exhausted or error");
  }
  if (auto it = fixture.find("tables"); it != fixture.end()) {
    for (const auto& [task_id, rows] : it->items()) {
      auto& out = tables_[task_id];
      for (const auto& row : rows) {
        Row r;
        r.forced = row.value("forced", "");
        for (const auto& cand : row.at("candidates")) {
          r.step.candidates.push_back({cand.at(0).get<std::string>(), cand.at(1).get<double>()});
        }
        out.push_back(std::move(r));
      }
    }
  }
}

std::unique_ptr<ScriptedCompletionBackend> ScriptedCompletionBackend::from_profile(BackendProfile profile) {
  const json fixture = load_fixture(profile);
  return std::make_unique<ScriptedCompletionBackend>(std::move(profile), fixture);
}

PredictionStep ScriptedCompletionBackend::next_step(const GenerationSession& session, std::size_t k) {
  const std::string forced = session.forced_text();
  if (auto it = tables_.find(session.task().task_id); it != tables_.end()) {
    for (const auto& row : it->second) {
      if (row.forced == forced) {
        PredictionStep step = row.step;
        normalize_step(step, k);
        return step;
      }
    }
  }
  if (default_mode_ == "error") {
    throw Error(ErrorCode::BackendUnavailable,
                profile_.name + ": no scripted step for task " + session.task().task_id);
  }
  PredictionStep step;
  const std::string& original = session.task().original;
  if (default_mode_ == "echo" && original.size() > forced.size() &&
      std::string_view(original).starts_with(forced)) {
    step.candidates.push_back({original.substr(forced.size()), 0.99});
  }
  return step;
}

// ---------------------------------------------------------------------------
// HTTP completion

HttpCompletionBackend::HttpCompletionBackend(BackendProfile profile)
    : profile_(std::move(profile)), limiter_(profile_.max_concurrency) {}

std::string HttpCompletionBackend::build_prompt(const GenerationSession& session) const {
  const InfillingTask& task = session.task();
  std::string prompt;
  if (profile_.capabilities.fim) {
    const FimSentinels s = profile_.sentinels.value_or(FimSentinels{});
    prompt = s.prefix + task.prefix + s.suffix + task.suffix + s.middle;
  } else {
    prompt = task.prefix;
  }
  prompt += session.forced_text();
  return prompt;
}

PredictionStep HttpCompletionBackend::next_step(const GenerationSession& session, std::size_t k) {
  const std::string prompt = build_prompt(session);
  if (text::approx_token_count(prompt) > profile_.max_context_tokens) {
    throw Error(ErrorCode::ContextTooLong, profile_.name + ": prompt exceeds context limit");
  }
  json body = {{"model", profile_.model},
               {"prompt", prompt},
               {"max_tokens", 1},
               {"temperature", 0},
               {"logprobs", k}};
  json reply;
  {
    RateLimiter::Permit permit(limiter_);
    reply = detail::post_json(profile_, profile_.completions_path, body, false);
  }
  PredictionStep step;
  try {
    const json& lp = reply.at("choices").at(0).at("logprobs");
    const json& top = lp.at("top_logprobs");
    if (!top.empty()) {
      for (const auto& [token, logprob] : top.at(0).items()) {
        step.candidates.push_back({token, std::exp(logprob.get<double>())});
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable,
                profile_.name + ": reply lacks top logprobs: " + std::string(e.what()));
  }
  normalize_step(step, k);
  return step;
}

std::unique_ptr<CompletionBackend> make_completion_backend(const BackendProfile& profile) {
  if (profile.kind == "scripted") return ScriptedCompletionBackend::from_profile(profile);
  if (!profile.capabilities.completion_logprobs) {
    throw Error(ErrorCode::InvalidArgument, "profile " + profile.name + " lacks completion_logprobs");
  }
  return std::make_unique<HttpCompletionBackend>(profile);
}

// ---------------------------------------------------------------------------
// chat

const std::string_view kFormatNudge =
    "Your previous reply was not valid JSON for the requested format. Emit valid JSON only.";

ScriptedChatBackend::ScriptedChatBackend(BackendProfile profile, const json& fixture)
    : profile_(std::move(profile)),
      rules_(fixture.value("rules", json::array())),
      default_(fixture.value("default", json{{"bugs", json::array()}})) {}

std::unique_ptr<ScriptedChatBackend> ScriptedChatBackend::from_profile(BackendProfile profile) {
  const json fixture = load_fixture(profile);
  return std::make_unique<ScriptedChatBackend>(std::move(profile), fixture);
}

std::string ScriptedChatBackend::complete(const std::vector<ChatMessage>& messages) {
  std::string first_user;
  int round = 0;
  for (const auto& m : messages) {
    if (m.role != "user") continue;
    if (first_user.empty()) first_user = m.content;
    if (m.content != kFormatNudge) ++round;
  }
  const int attempt = !messages.empty() && messages.back().content == kFormatNudge ? 2 : 1;
  for (const auto& rule : rules_) {
    if (rule.contains("contains") &&
        first_user.find(rule["contains"].get<std::string>()) == std::string::npos) {
      continue;
    }
    if (rule.contains("round") && rule["round"].get<int>() != round) continue;
    if (rule.contains("attempt") && rule["attempt"].get<int>() != attempt) continue;
    if (rule.contains("rate_limited")) {
      throw RateLimitedError(profile_.name + ": scripted rate limit", rule["rate_limited"].get<double>());
    }
    if (rule.contains("raw")) return rule["raw"].get<std::string>();
    return rule.at("response").dump();
  }
  return default_.dump();
}

HttpChatBackend::HttpChatBackend(BackendProfile profile)
    : profile_(std::move(profile)), limiter_(profile_.max_concurrency) {}

std::string HttpChatBackend::complete(const std::vector<ChatMessage>& messages) {
  std::size_t tokens = 0;
  json msgs = json::array();
  for (const auto& m : messages) {
    msgs.push_back({{"role", m.role}, {"content", m.content}});
    tokens += text::approx_token_count(m.content);
  }
  if (tokens > profile_.max_context_tokens) {
    throw Error(ErrorCode::ContextTooLong, profile_.name + ": conversation exceeds context limit");
  }
  json body = {{"model", profile_.model},
               {"messages", msgs},
               {"temperature", 0},
               {"response_format", {{"type", "json_object"}}}};
  json reply;
  {
    RateLimiter::Permit permit(limiter_);
    reply = detail::post_json(profile_, profile_.chat_path, body, true);
  }
  try {
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable,
                profile_.name + ": reply lacks message content: " + std::string(e.what()));
  }
}

std::unique_ptr<ChatBackend> make_chat_backend(const BackendProfile& profile) {
  if (profile.kind == "scripted") return ScriptedChatBackend::from_profile(profile);
  if (!profile.capabilities.chat_json) {
    throw Error(ErrorCode::InvalidArgument, "profile " + profile.name + " lacks chat_json");
  }
  return std::make_unique<HttpChatBackend>(profile);
}

// ---------------------------------------------------------------------------
// schema

namespace {

constexpr std::string_view kMandatory[] = {"code_line", "explanation"};
constexpr std::string_view kSelective[] = {"fixed_line", "token_level", "category", "priority"};

bool type_ok(std::string_view property, const json& value) {
  if (property == "token_level") return value.is_boolean();
  return value.is_string();
}

std::string strip_fence(std::string_view raw) {
  std::string s = text::trim(raw);
  if (s.starts_with("```")) {
    const auto first_nl = s.find('\n');
    const auto last = s.rfind("```");
    if (first_nl != std::string::npos && last != std::string::npos && last > first_nl) {
      s = s.substr(first_nl + 1, last - first_nl - 1);
    }
  }
  return s;
}

}  // namespace

std::vector<std::string> PropertySchema::properties() const {
  std::vector<std::string> out(std::begin(kMandatory), std::end(kMandatory));
  for (const auto& p : selective) out.push_back(p);
  return out;
}

bool PropertySchema::requests(std::string_view property) const {
  for (auto m : kMandatory) {
    if (m == property) return true;
  }
  return std::find(selective.begin(), selective.end(), property) != selective.end();
}

json PropertySchema::to_json_schema() const {
  json props = json::object();
  for (const auto& p : properties()) {
    props[p] = {{"type", p == "token_level" ? "boolean" : "string"}};
  }
  return {{"type", "object"},
          {"properties",
           {{"bugs",
             {{"type", "array"},
              {"items", {{"type", "object"}, {"properties", props}, {"required", properties()}}}}}}},
          {"required", {"bugs"}}};
}

json validate_round_response(std::string_view raw, const PropertySchema& schema) {
  for (const auto& p : schema.selective) {
    if (std::find(std::begin(kSelective), std::end(kSelective), p) == std::end(kSelective)) {
      throw Error(ErrorCode::InvalidArgument, "unknown property '" + p + "'");
    }
  }
  json parsed;
  try {
    parsed = json::parse(strip_fence(raw));
  } catch (const json::exception&) {
    throw Error(ErrorCode::SchemaViolation, "response is not JSON");
  }
  json list;
  if (parsed.is_array()) {
    list = parsed;
  } else if (parsed.is_object() && parsed.contains("bugs") && parsed["bugs"].is_array()) {
    list = parsed["bugs"];
  } else {
    throw Error(ErrorCode::SchemaViolation, "response lacks a \"bugs\" array");
  }
  json bugs = json::array();
  for (const auto& item : list) {
    if (!item.is_object()) throw Error(ErrorCode::SchemaViolation, "finding is not an object");
    json kept = json::object();
    for (const auto& property : schema.properties()) {
      auto it = item.find(property);
      if (it == item.end() || it->is_null()) {
        throw Error(ErrorCode::SchemaViolation, "finding lacks \"" + property + "\"");
      }
      if (!type_ok(property, *it)) {
        throw Error(ErrorCode::SchemaViolation, "finding has mistyped \"" + property + "\"");
      }
      kept[property] = *it;
    }
    bugs.push_back(std::move(kept));
  }
  return {{"bugs", std::move(bugs)}};
}

std::vector<ChatMessage> ChatExchange::messages() const {
  std::vector<ChatMessage> out;
  if (!system.empty()) out.push_back({"system", system});
  for (const auto& r : rounds) {
    out.push_back({"user", r.user_prompt});
    out.push_back({"assistant", r.raw_response});
  }
  return out;
}

const json& chat_round(ChatExchange& exchange, ChatBackend& backend, std::string user_prompt,
                       const PropertySchema& schema) {
  std::vector<ChatMessage> messages = exchange.messages();
  messages.push_back({"user", user_prompt});
  std::string raw = backend.complete(messages);
  json response;
  try {
    response = validate_round_response(raw, schema);
  } catch (const Error& first) {
    if (first.code() != ErrorCode::SchemaViolation) throw;
    log::info(backend.profile().name, ": ", first.what(), "; asking for valid JSON");
    messages.push_back({"assistant", raw});
    messages.push_back({"user", std::string(kFormatNudge)});
    raw = backend.complete(messages);
    response = validate_round_response(raw, schema);
  }
  exchange.rounds.push_back({std::move(user_prompt), std::move(raw), std::move(response), schema});
  return exchange.rounds.back().response;
}

}  // namespace tibscan

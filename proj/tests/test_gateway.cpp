#include <doctest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include <httplib.h>

#include "tibscan/error.hpp"
#include "tibscan/gateway.hpp"

using namespace tibscan;

namespace {

std::shared_ptr<InfillingTask> task_with(std::string id, std::string original) {
  auto t = std::make_shared<InfillingTask>();
  t->task_id = std::move(id);
  t->unit = parse_unit("x.py", Language::Python, "");
  t->original = std::move(original);
  t->prefix = "quote(";
  t->suffix = ")\n";
  return t;
}

BackendProfile scripted(std::string name) {
  BackendProfile p;
  p.name = std::move(name);
  p.kind = "scripted";
  return p;
}

// Local server on an ephemeral port for the HTTP clients.
struct FakeServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  BackendProfile profile(std::string name) const {
    BackendProfile p;
    p.name = std::move(name);
    p.base_url = "http://127.0.0.1:" + std::to_string(port);
    p.model = "m";
    p.capabilities.completion_logprobs = true;
    p.capabilities.chat_json = true;
    p.backoff_seconds = 0.001;
    p.timeout_seconds = 5;
    return p;
  }
};

}  // namespace

TEST_CASE("session value semantics") {
  GenerationSession s(task_with("a", "params"));
  auto s1 = force_accept(s, "par");
  auto s2 = force_accept(s1, "ams");
  CHECK(s.forced().empty());
  CHECK(s1.forced().size() == 1);
  REQUIRE(s2.forced().size() == 2);
  CHECK(s2.forced()[0] == "par");
  CHECK(s2.forced()[1] == "ams");
  CHECK(s2.forced_text() == "params");
}

TEST_CASE("scripted completion backend") {
  const json fixture = json::parse(R"({
    "tables": {"a": [
      {"forced": "", "candidates": [["query", 0.2], ["par", 0.7], ["x", 0.05]]},
      {"forced": "par", "candidates": [["ams", 0.9]]}]},
    "default": "echo"})");
  ScriptedCompletionBackend b(scripted("s"), fixture);
  GenerationSession s(task_with("a", "params"));
  auto step = b.next_step(s, 10);
  REQUIRE(step.candidates.size() == 3);
  CHECK(step.candidates[0].text == "par");
  CHECK(step.candidates[1].text == "query");
  CHECK(b.next_step(s, 2).candidates.size() == 2);
  // Idempotent without accepting.
  CHECK(b.next_step(s, 10).candidates == step.candidates);
  auto after = b.next_step(s.accept("par"), 10);
  REQUIRE(after.candidates.size() == 1);
  CHECK(after.candidates[0].text == "ams");
  // Unknown task falls back to echo.
  GenerationSession other(task_with("zzz", "netloc"));
  auto echo = b.next_step(other.accept("net"), 10);
  REQUIRE(echo.candidates.size() == 1);
  CHECK(echo.candidates[0].text == "loc");

  ScriptedCompletionBackend err(scripted("e"), json{{"default", "error"}});
  CHECK_THROWS_AS(err.next_step(other, 5), Error);
  ScriptedCompletionBackend ex(scripted("x"), json{{"default", "exhausted"}});
  CHECK(ex.next_step(other, 5).candidates.empty());
}

TEST_CASE("http completion backend") {
  FakeServer fake;
  std::atomic<int> calls{0};
  json last_body;
  std::mutex m;
  fake.server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++calls;
    if (n == 1) {
      res.status = 503;
      return;
    }
    {
      std::lock_guard lock(m);
      last_body = json::parse(req.body);
    }
    json top = {{"par", std::log(0.6)}, {"query", std::log(0.3)}, {"x", std::log(0.1)}};
    json choice = {{"text", "par"}, {"logprobs", {{"tokens", json::array({"par"})}, {"top_logprobs", json::array({top})}}}};
    json reply = {{"choices", json::array({choice})}};
    res.set_content(reply.dump(), "application/json");
  });
  fake.start();

  auto profile = fake.profile("h");
  profile.capabilities.fim = true;
  profile.sentinels = FimSentinels{"<P>", "<S>", "<M>"};
  HttpCompletionBackend b(profile);
  GenerationSession s(task_with("a", "params"));
  CHECK(b.build_prompt(s.accept("pa")) == "<P>quote(<S>)\n<M>pa");
  auto step = b.next_step(s, 2);
  CHECK(calls == 2);  // one retry after the 503
  REQUIRE(step.candidates.size() == 2);
  CHECK(step.candidates[0].text == "par");
  CHECK(step.candidates[0].prob == doctest::Approx(0.6));
  CHECK(step.candidates[1].prob <= step.candidates[0].prob);
  CHECK(last_body["max_tokens"] == 1);
  CHECK(last_body["temperature"] == 0);
  CHECK(last_body["logprobs"] == 2);

  profile.capabilities.fim = false;
  HttpCompletionBackend plain(profile);
  CHECK(plain.build_prompt(s.accept("pa")) == "quote(pa");

  profile.max_context_tokens = 1;
  HttpCompletionBackend tiny(profile);
  try {
    tiny.next_step(s, 2);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ContextTooLong);
  }
}

TEST_CASE("http backend gives up after retries") {
  FakeServer fake;
  std::atomic<int> calls{0};
  fake.server.Post("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 500;
  });
  fake.start();
  auto profile = fake.profile("h");
  profile.max_retries = 2;
  HttpCompletionBackend b(profile);
  try {
    b.next_step(GenerationSession(task_with("a", "x")), 3);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BackendUnavailable);
  }
  CHECK(calls == 3);
}

TEST_CASE("http chat backend and rate limits") {
  FakeServer fake;
  std::atomic<int> calls{0};
  fake.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (++calls == 1) {
      res.status = 429;
      res.set_header("Retry-After", "7");
      return;
    }
    const json body = json::parse(req.body);
    CHECK(body["messages"][0]["role"] == "system");
    json content = {{"bugs", json::array({{{"code_line", "x = y"}, {"explanation", "wrong"}}})}};
    json message = {{"role", "assistant"}, {"content", content.dump()}};
    json reply = {{"choices", json::array({json{{"message", message}}})}};
    res.set_content(reply.dump(), "application/json");
  });
  fake.start();
  HttpChatBackend chat(fake.profile("c"));
  ChatExchange ex;
  ex.system = "sys";
  try {
    chat_round(ex, chat, "code", {});
    FAIL("expected throw");
  } catch (const RateLimitedError& e) {
    CHECK(e.retry_after_seconds() == doctest::Approx(7.0));
  }
  CHECK(ex.rounds.empty());
  const json& r = chat_round(ex, chat, "code", {});
  REQUIRE(r["bugs"].size() == 1);
  CHECK(r["bugs"][0]["code_line"] == "x = y");
}

TEST_CASE("schema validation") {
  PropertySchema round1;
  PropertySchema round2{{"fixed_line", "token_level", "category"}};
  CHECK(validate_round_response(R"({"bugs": []})", round1)["bugs"].empty());
  CHECK(validate_round_response("```json\n[{\"code_line\":\"a\",\"explanation\":\"b\"}]\n```", round1)["bugs"].size() == 1);
  // Unrequested properties are stripped.
  auto stripped = validate_round_response(
      R"({"bugs":[{"code_line":"a","explanation":"b","priority":"High"}]})", round1);
  CHECK_FALSE(stripped["bugs"][0].contains("priority"));
  CHECK_THROWS_AS(validate_round_response(R"({"bugs":[{"code_line":"a"}]})", round1), Error);
  CHECK_THROWS_AS(validate_round_response("not json", round1), Error);
  CHECK_THROWS_AS(validate_round_response(R"({"result": []})", round1), Error);
  CHECK_THROWS_AS(
      validate_round_response(R"({"bugs":[{"code_line":"a","explanation":"b","fixed_line":"c","token_level":"yes","category":"LogicBug"}]})", round2),
      Error);
  auto ok = validate_round_response(
      R"({"bugs":[{"code_line":"a","explanation":"b","fixed_line":"c","token_level":true,"category":"LogicBug"}]})", round2);
  CHECK(ok["bugs"][0]["token_level"] == true);
}

TEST_CASE("chat round retries once with a nudge") {
  const json fixture = json::parse(R"({"rules": [
    {"contains": "good", "attempt": 1, "raw": "oops"},
    {"contains": "good", "attempt": 2, "response": {"bugs": []}},
    {"contains": "bad", "raw": "still not json"},
    {"contains": "two", "round": 2, "response": {"bugs": [{"code_line": "r2", "explanation": "e"}]}}]})");
  ScriptedChatBackend chat(scripted("chat"), fixture);

  ChatExchange ex;
  ex.system = "sys";
  CHECK(chat_round(ex, chat, "good code", {})["bugs"].empty());
  REQUIRE(ex.rounds.size() == 1);
  CHECK(ex.rounds[0].raw_response == R"({"bugs":[]})");

  ChatExchange bad;
  try {
    chat_round(bad, chat, "bad code", {});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SchemaViolation);
  }
  CHECK(bad.rounds.empty());

  ChatExchange two;
  CHECK(chat_round(two, chat, "two rounds", {})["bugs"].empty());
  CHECK(chat_round(two, chat, "second", {})["bugs"][0]["code_line"] == "r2");
  auto msgs = two.messages();
  REQUIRE(msgs.size() == 4);
  CHECK(msgs[0].content == "two rounds");
  CHECK(msgs[2].content == "second");
}

TEST_CASE("profile parsing") {
  json j = {{"name", "local1"},
            {"kind", "scripted"},
            {"fixture", "steps.json"},
            {"capabilities", {"completion_logprobs", "fim"}},
            {"sentinels", {{"prefix", "<fim_prefix>"}, {"suffix", "<fim_suffix>"}, {"middle", "<fim_middle>"}}}};
  auto p = parse_profile(j, "/cfg");
  CHECK(p.fixture == std::filesystem::path("/cfg/steps.json"));
  CHECK(p.capabilities.fim);
  CHECK_FALSE(p.capabilities.chat_json);
  CHECK(p.sentinels->prefix == "<fim_prefix>");
  CHECK_THROWS_AS(parse_profile(json{{"name", "x"}, {"kind", "http"}}), Error);
  CHECK_THROWS_AS(parse_profile(json{{"name", "x"}, {"kind", "grpc"}}), Error);
  auto round = parse_profile(profile_to_json(p), "/cfg");
  CHECK(round.name == p.name);
  CHECK(round.capabilities.completion_logprobs);
}

TEST_CASE("rate limiter bounds concurrency") {
  RateLimiter limiter(2);
  std::atomic<int> active{0}, peak{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] {
      RateLimiter::Permit permit(limiter);
      const int now = ++active;
      int prev = peak.load();
      while (now > prev && !peak.compare_exchange_weak(prev, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      --active;
    });
  }
  for (auto& t : threads) t.join();
  CHECK(peak <= 2);
}

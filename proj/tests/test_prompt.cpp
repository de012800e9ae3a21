#include <doctest.h>

#include <fstream>
#include <sstream>

#include "tibscan/error.hpp"
#include "tibscan/log.hpp"
#include "tibscan/prompt.hpp"

using namespace tibscan;

namespace {

std::string read_file(const std::string& rel) {
  std::ifstream in(std::string(TIBSCAN_TEST_DATA) + "/" + rel, std::ios::binary);
  REQUIRE(in);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Snippet buggy() {
  return {read_file("fixtures/buggy_snippet.py"), 987, Language::Python};
}

std::string slug(std::string id) {
  for (char& c : id) {
    if (c == '/' || c == '+') c = '_';
  }
  return id;
}

BackendProfile chat_profile() {
  BackendProfile p;
  p.name = "chat";
  p.kind = "scripted";
  p.capabilities.chat_json = true;
  return p;
}

BugFinding finding(std::string line, std::optional<bool> token_level, std::optional<std::string> category) {
  BugFinding f;
  f.code_line = std::move(line);
  f.explanation = "e";
  f.token_level = token_level;
  f.category = std::move(category);
  return f;
}

}  // namespace

TEST_CASE("all built-in templates are registered") {
  const std::vector<std::string> want = {"1", "1FT", "1/2FT", "1/2FT/3P", "1/2FT/3Ca", "1/2FTCa", "1/2FTCa+HL"};
  CHECK(template_ids() == want);
  CHECK(find_template("1/2FTCa").rounds.size() == 2);
  CHECK(find_template("1/2FT/3P").rounds.size() == 3);
  CHECK(find_template("1/2FTCa+HL").supports_highlights());
  CHECK_FALSE(find_template("1/2FTCa").supports_highlights());
  CHECK_THROWS_AS(find_template("2"), Error);
}

TEST_CASE("rendered templates match the golden transcripts byte for byte") {
  const Snippet snippet = buggy();
  HighlightSet hl;
  hl.add(991);
  for (const auto& id : template_ids()) {
    CAPTURE(id);
    const auto& t = find_template(id);
    const HighlightSet* h = t.supports_highlights() ? &hl : nullptr;
    std::string out;
    for (std::size_t r = 0; r < t.rounds.size(); ++r) {
      const auto rendered = render_round(t, r, snippet, h);
      if (r == 0) out = "=== system ===\n" + rendered.system + "\n";
      out += "=== round " + std::to_string(r + 1) + " ===\n" + rendered.user + "\n";
    }
    CHECK(out == read_file("golden/" + slug(id) + ".txt"));
  }
}

TEST_CASE("template 1 user text") {
  const auto r = render_round(find_template("1"), 0, buggy());
  std::string code = buggy().text;
  while (code.back() == '\n') code.pop_back();
  CHECK(r.user == code + "\nOutput exact lines of semantic bugs and concise explanations of the bugs.");
  CHECK(r.system.starts_with("You're a Python expert."));
  CHECK(r.system.find("4. If there is no wrong usage in any line") != std::string::npos);
  CHECK(r.schema.properties() == std::vector<std::string>{"code_line", "explanation"});
}

TEST_CASE("C system prompt names the language") {
  CHECK(system_prompt(Language::C).starts_with("You're a C expert."));
}

TEST_CASE("highlights") {
  const auto& hl_tmpl = find_template("1/2FTCa+HL");
  HighlightSet hl;
  hl.add(995);
  hl.add(991);
  hl.add(995);
  CHECK(hl.joined() == "991, 995");
  const auto r = render_round(hl_tmpl, 0, buggy(), &hl);
  CHECK(r.user.ends_with("\nAlso, pay additional attention to these lines: 991, 995"));
  CHECK(render_round(hl_tmpl, 1, buggy(), &hl).user.find("pay additional attention") == std::string::npos);

  SUBCASE("empty set omits the clause") {
    HighlightSet none;
    const auto plain = render_round(hl_tmpl, 0, buggy(), &none);
    CHECK(plain.user.find("pay additional attention") == std::string::npos);
    CHECK(plain.user.ends_with("merely changing a variable/method name."));
    CHECK(r.user == plain.user + "\nAlso, pay additional attention to these lines: 991, 995");
    CHECK(render_round(hl_tmpl, 0, buggy()).user == plain.user);
  }
  SUBCASE("rejected on templates without a clause") {
    CHECK_THROWS_AS(render_round(find_template("1/2FTCa"), 0, buggy(), &hl), Error);
  }
  SUBCASE("lines must lie in the snippet") {
    HighlightSet out;
    out.add(986);
    CHECK_THROWS_AS(render_round(hl_tmpl, 0, buggy(), &out), Error);
    HighlightSet last;
    last.add(995);
    CHECK_NOTHROW(render_round(hl_tmpl, 0, buggy(), &last));
    last.add(996);
    CHECK_THROWS_AS(render_round(hl_tmpl, 0, buggy(), &last), Error);
  }
  CHECK_THROWS_AS(render_round(hl_tmpl, 2, buggy(), &hl), Error);
}

TEST_CASE("substitute is single pass") {
  CHECK(substitute("a {x} b", {{"x", "{x}"}}) == "a {x} b");
  CHECK(substitute("{x}{y}", {{"x", "{y}"}, {"y", "2"}}) == "{y}2");
  CHECK(substitute("dict {} and {A}", {}) == "dict {} and {A}");
  try {
    substitute("{missing}", {});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingPlaceholder);
  }
}

TEST_CASE("template parsing") {
  auto t = parse_template("@id x\n@round code_line explanation fixed_line\nhello {code}\n\n@round token_level\nbye\n");
  CHECK(t.id == "x");
  REQUIRE(t.rounds.size() == 2);
  CHECK(t.rounds[0].text == "hello {code}");
  CHECK(t.rounds[0].schema.selective == std::vector<std::string>{"fixed_line"});
  CHECK(t.rounds[1].text == "bye");
  CHECK_THROWS_AS(parse_template("@round\nx"), Error);
  CHECK_THROWS_AS(parse_template("@id y\nstray\n@round\n"), Error);
}

TEST_CASE("categories and priorities") {
  CHECK(canonical_category("Logic Bug") == "LogicBug");
  CHECK(canonical_category("security vulnerability") == "SecurityVulnerability");
  CHECK(canonical_category("Not a Bug") == "NotABug");
  CHECK(canonical_category("Unexpected Behaviour") == "UnexpectedBehavior");
  CHECK(canonical_category("Others: Race Condition") == "Others(Race Condition)");
  CHECK(canonical_category("Race Condition") == "Others(Race Condition)");
  CHECK(canonical_priority("high") == "High");
}

TEST_CASE("line resolution") {
  const Snippet s = buggy();
  BugFinding f;
  f.code_line = "params_quoted  =  quote(query)";
  resolve_line(f, s);
  CHECK(f.resolved_line_no == 991u);

  f.code_line = "quote_plus(query)";
  resolve_line(f, s);
  CHECK(f.resolved_line_no == 992u);

  // Appears on several lines: ambiguous.
  f.code_line = "quote(";
  resolve_line(f, s);
  CHECK_FALSE(f.resolved_line_no);

  f.code_line = "params_quoted = quote(params) # fixed";
  resolve_line(f, s);
  CHECK_FALSE(f.resolved_line_no);
  CHECK(f.approximate_line_no == 991u);
}

TEST_CASE("exchange keeps the findings that survive the last round") {
  const json fixture = json::parse(R"js({"rules": [
    {"contains": "params_quoted", "round": 1, "response": {"bugs": [
      {"code_line": "params_quoted = quote(query)", "explanation": "should quote params"},
      {"code_line": "# netloc_quoted = quote(netloc)", "explanation": "netloc is not quoted"}]}},
    {"contains": "params_quoted", "round": 2, "response": {"bugs": [
      {"code_line": "params_quoted = quote(query)", "explanation": "wrong variable",
       "fixed_line": "params_quoted = quote(params)", "token_level": true, "category": "Logic Bug",
       "priority": "High"}]}}],
    "default": {"bugs": []}})js");
  ScriptedChatBackend chat(chat_profile(), fixture);

  const auto result = run_exchange(find_template("1/2FTCa"), buggy(), nullptr, chat);
  CHECK(result.rounds_used == 2);
  REQUIRE(result.findings.size() == 1);
  const auto& f = result.findings[0];
  CHECK(f.resolved_line_no == 991u);
  CHECK(f.token_level == true);
  CHECK(f.category == "LogicBug");
  CHECK(f.fixed_line == "params_quoted = quote(params)");
  CHECK_FALSE(f.priority);  // not requested by this template
  CHECK(result.exchange.rounds.size() == 2);
  CHECK(result.exchange.messages().size() == 5);  // system + 2 user + 2 assistant

  SUBCASE("empty first round stops early") {
    Snippet clean{"def f(x):\n    return x\n", 1, Language::Python};
    const auto none = run_exchange(find_template("1/2FTCa"), clean, nullptr, chat);
    CHECK(none.findings.empty());
    CHECK(none.rounds_used == 1);
  }
}

TEST_CASE("filter policy") {
  std::vector<BugFinding> in = {
      finding("a", true, "LogicBug"),     finding("b", false, "LogicBug"),
      finding("c", true, "Enhancement"),  finding("d", true, "BadSmell"),
      finding("e", std::nullopt, std::nullopt), finding("f", true, "Others(Race)"),
      finding("g", true, "SecurityVulnerability"),
  };
  auto out = filter_findings(in);
  std::vector<std::string> kept;
  for (const auto& f : out) kept.push_back(f.code_line);
  CHECK(kept == std::vector<std::string>{"a", "d", "e", "g"});
  CHECK(filter_findings(out).size() == out.size());
  CHECK(filter_findings({}).empty());

  FilterPolicy strict;
  strict.drop_below_high_priority = true;
  auto medium = finding("m", true, "LogicBug");
  medium.priority = "Medium";
  auto high = finding("h", true, "LogicBug");
  high.priority = "High";
  std::vector<std::string> logged;
  log::set_sink([&](log::Level, std::string_view m) { logged.emplace_back(m); });
  auto kept2 = filter_findings({medium, high}, strict);
  log::set_sink({});
  REQUIRE(kept2.size() == 1);
  CHECK(kept2[0].code_line == "h");
  CHECK_FALSE(logged.empty());

  const auto p = parse_filter_policy(json{{"drop_below_high_priority", true}});
  CHECK(p.drop_below_high_priority);
  CHECK(p.drop_non_token_level);
}

TEST_CASE("finding json round trip") {
  auto f = finding("x = 1", true, "LogicBug");
  f.resolved_line_no = 4;
  const auto back = BugFinding::from_json(f.to_json());
  CHECK(back.code_line == "x = 1");
  CHECK(back.resolved_line_no == 4u);
  CHECK(back.category == "LogicBug");
  CHECK_FALSE(back.fixed_line);
}

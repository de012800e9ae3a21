#include <doctest.h>

#include <unistd.h>

#include <atomic>
#include <fstream>
#include <sstream>

#include "tibscan/error.hpp"
#include "tibscan/pipeline.hpp"
#include "tibscan/text.hpp"

using namespace tibscan;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> n{0};
    path = fs::temp_directory_path() /
           ("tibscan-pipeline-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> out;
  const std::string body = slurp(p);
  for (const auto& line : text::split_lines(body)) {
    if (!text::trim(line).empty()) out.push_back(json::parse(line));
  }
  return out;
}

const char* kMath = R"(def scale(values, factor):
    out = []
    for v in values:
        out.append(v * factor)
    return out


def total(items):
    acc = 0
    for item in items:
        acc = acc + items
    return acc
)";

const char* kText = R"(def shout(word):
    return word.upper() + "!"


def join_all(parts, sep):
    return sep.join(parts)
)";

/// Task ids in `file` (display path) on `line` whose original is `original`.
std::vector<std::string> task_ids(const fs::path& base, const std::string& file, std::uint32_t line,
                                  const std::string& original) {
  auto unit = parse_unit(file, Language::Python, slurp(base / file));
  std::vector<std::string> out;
  for (const auto& t : enumerate_tasks(unit, ContextStrategy::Function, {}).tasks) {
    if (t.line_no == line && t.original == original) out.push_back(t.task_id);
  }
  return out;
}

json deviate(const std::string& token) {
  return json::array({{{"forced", ""}, {"candidates", json::array({json::array({token, 0.95})})}}});
}

struct Repo {
  TempDir dir;
  json local = {{"default", "echo"}, {"tables", json::object()}};
  json chat = {{"rules", json::array()}, {"default", {{"bugs", json::array()}}}};
  json config;

  Repo() {
    write_file(dir.path / "repo/pkg/math_utils.py", kMath);
    write_file(dir.path / "repo/pkg/text_utils.py", kText);
    config = {{"language", "python"},
              {"paths", {"repo"}},
              {"profiles",
               {{{"name", "local"},
                 {"kind", "scripted"},
                 {"fixture", "local.json"},
                 {"capabilities", {{"completion_logprobs", true}}},
                 {"price_per_call", 0.001}},
                {{"name", "chat"},
                 {"kind", "scripted"},
                 {"fixture", "chat.json"},
                 {"capabilities", {{"chat_json", true}}},
                 {"price_per_call", 0.025}}}},
              {"stages", {"local", "chat"}},
              {"output_dir", "out"},
              {"seed", 7}};
  }

  RunConfig build() {
    write_file(dir.path / "local.json", local.dump());
    write_file(dir.path / "chat.json", chat.dump());
    return parse_run_config(config, dir.path);
  }
  fs::path out() const { return dir.path / "out"; }
};

json finding(const std::string& code_line) {
  return {{"code_line", code_line},
          {"explanation", "adds the list instead of the element"},
          {"fixed_line", "acc = acc + item"},
          {"token_level", true},
          {"category", "Logic Bug"}};
}

std::size_t funnel_total(const json& summary) {
  std::size_t n = 0;
  for (const auto& step : summary["funnel"]) n += step["tasks"].get<std::size_t>();
  return n;
}

}  // namespace

TEST_CASE("config parsing and stage validation") {
  Repo r;
  RunConfig c = r.build();
  CHECK(c.stages.size() == 2);
  CHECK(c.stages[0].consistency.prob_thresh == 0.9);
  CHECK(c.paths[0] == r.dir.path / "repo");
  CHECK(c.output_dir == r.dir.path / "out");
  CHECK(c.template_id == "1/2FTCa+HL");
  CHECK_NOTHROW(c.validate_stages());

  r.config["stages"] = {"chat", "local"};
  CHECK_THROWS_AS(r.build().validate_stages(), Error);
  r.config["stages"] = json::array({{{"profile", "local"}, {"consistency", {{"rank_thresh", 3}}}}, "chat"});
  r.config["consistency"] = {{"prob_thresh", 0.8}};
  c = r.build();
  CHECK(c.stages[0].consistency.rank_thresh == 3);
  CHECK(c.stages[0].consistency.prob_thresh == 0.8);
  CHECK(c.stages[1].consistency.prob_thresh == 0.8);
  r.config["stages"] = {"nope", "chat"};
  CHECK_THROWS_AS(r.build().validate_stages(), Error);
  r.config["template"] = "9";
  CHECK_THROWS_AS(r.build(), Error);
  r.config.erase("template");
  r.config["language"] = "cobol";
  CHECK_THROWS_AS(r.build(), Error);
}

TEST_CASE("file discovery filters") {
  Repo r;
  write_file(r.dir.path / "repo/pkg/notes.txt", "x");
  write_file(r.dir.path / "repo/tests/test_math.py", "def test_a():\n    pass\n");
  write_file(r.dir.path / "repo/gen/proto_pb2.py", "# Generated by the protocol buffer compiler.  DO NOT EDIT!\nx = 1\n");
  r.config["exclude"] = {"tests/*"};
  RunConfig c = r.build();
  auto files = discover_files(c);
  REQUIRE(files.size() == 3);
  CHECK(files[0].filename() == "proto_pb2.py");
  CHECK(files[1].filename() == "math_utils.py");
  r.config["exclude"] = json::array();
  r.config["exclude_keywords"] = {"TEST", "pb2"};
  CHECK(discover_files(r.build()).size() == 2);
  CHECK(looks_generated("# @generated\nx = 1\n"));
  CHECK_FALSE(looks_generated("def f():\n    pass\n"));
}

TEST_CASE("all-consistent local stage sends nothing to chat") {
  Repo r;
  const auto res = run_scan(r.build());
  CHECK(res.reports == 0);
  CHECK_FALSE(res.partial);
  CHECK(res.summary["chat"]["api_calls"] == 0);
  CHECK(res.summary["chat"]["functions"] == 0);
  const std::size_t initial = res.summary["tasks"]["initial"];
  CHECK(initial > 10);
  CHECK(funnel_total(res.summary) == initial);
  CHECK(res.summary["stages"][0]["dropped_consistent"] == initial);
  CHECK(jsonl(r.out() / "reports.jsonl").empty());
  CHECK(jsonl(r.out() / "tasks.jsonl").size() == initial);
  CHECK(jsonl(r.out() / "verdicts.jsonl").size() == initial);
}

TEST_CASE("planted inconsistency yields one report") {
  Repo r;
  const auto ids = task_ids(r.dir.path, "repo/pkg/math_utils.py", 11, "items");
  REQUIRE(ids.size() == 1);
  r.local["tables"][ids[0]] = deviate("acc");
  r.chat["rules"].push_back({{"contains", "def total"}, {"response", {{"bugs", {finding("acc = acc + items")}}}}});
  const auto res = run_scan(r.build());

  CHECK(res.reports == 1);
  CHECK(res.summary["chat"]["functions"] == 1);
  CHECK(res.summary["chat"]["api_calls"] == 2);
  CHECK(res.summary["chat"]["cost_estimate"] == doctest::Approx(0.05));
  CHECK(funnel_total(res.summary) == res.summary["tasks"]["initial"].get<std::size_t>());

  const auto reports = jsonl(r.out() / "reports.jsonl");
  REQUIRE(reports.size() == 1);
  const json& rep = reports[0];
  CHECK(rep["repo"] == "repo");
  CHECK(rep["file"] == "repo/pkg/math_utils.py");
  CHECK(rep["function"] == "total");
  CHECK(rep["line_no"] == 11);
  CHECK(rep["line_resolution"] == "exact");
  CHECK(rep["original_tokens"] == json::array({"items"}));
  CHECK(rep["finding"]["category"] == "LogicBug");
  CHECK(rep["stages"] == json::array({"local", "chat"}));
  REQUIRE(rep["trace"].size() == 1);
  CHECK(rep["trace"][0]["verdicts"][0]["reason"] == "confident_deviation");
  CHECK_FALSE(rep.contains("elapsed_seconds"));

  const auto findings = jsonl(r.out() / "findings.jsonl");
  REQUIRE(findings.size() == 1);
  CHECK(findings[0]["highlights"] == json::array({11}));
  CHECK(findings[0]["rounds_used"] == 2);
}

TEST_CASE("survivors on one line share a highlight and an exchange") {
  Repo r;
  std::size_t planted = 0;
  for (const char* tok : {"acc", "items"}) {
    for (const auto& id : task_ids(r.dir.path, "repo/pkg/math_utils.py", 11, tok)) {
      r.local["tables"][id] = deviate("zzz");
      ++planted;
    }
  }
  REQUIRE(planted >= 2);
  const auto res = run_scan(r.build());
  CHECK(res.summary["stages"][0]["out"] == planted);
  CHECK(res.summary["chat"]["functions"] == 1);
  const auto findings = jsonl(r.out() / "findings.jsonl");
  REQUIRE(findings.size() == 1);
  CHECK(findings[0]["highlights"] == json::array({11}));
  // Chat returned nothing: every survivor ends in the no-report bucket.
  CHECK(res.reports == 0);
  CHECK(funnel_total(res.summary) == res.summary["tasks"]["initial"].get<std::size_t>());
}

TEST_CASE("highlights are capped") {
  Repo r;
  auto unit = parse_unit("repo/pkg/math_utils.py", Language::Python, kMath);
  for (const auto& t : enumerate_tasks(unit, ContextStrategy::Function, {}).tasks) {
    if (t.function().name == "total") r.local["tables"][t.task_id] = deviate("zzz");
  }
  r.config["highlight_cap"] = 2;
  run_scan(r.build());
  const auto findings = jsonl(r.out() / "findings.jsonl");
  REQUIRE(findings.size() == 1);
  CHECK(findings[0]["highlights"].size() == 2);
}

TEST_CASE("api budget stops the chat stage") {
  Repo r;
  for (const auto& id : task_ids(r.dir.path, "repo/pkg/math_utils.py", 11, "items")) r.local["tables"][id] = deviate("x");
  for (const auto& id : task_ids(r.dir.path, "repo/pkg/text_utils.py", 2, "word")) r.local["tables"][id] = deviate("x");
  r.config["budget"] = {{"max_api_calls", 5}};
  const auto res = run_scan(r.build());
  CHECK(res.partial);
  CHECK(res.summary["partial"] == true);
  CHECK(res.summary["chat"]["functions"] == 2);
  // One exchange admitted; its empty first round ends it.
  CHECK(res.summary["chat"]["api_calls"] == 1);
  CHECK(jsonl(r.out() / "findings.jsonl").size() == 1);
  CHECK(funnel_total(res.summary) == res.summary["tasks"]["initial"].get<std::size_t>());
}

TEST_CASE("scan outputs are byte-identical across runs and worker counts") {
  Repo r;
  for (const auto& id : task_ids(r.dir.path, "repo/pkg/math_utils.py", 11, "items")) r.local["tables"][id] = deviate("x");
  for (const auto& id : task_ids(r.dir.path, "repo/pkg/text_utils.py", 6, "parts")) r.local["tables"][id] = deviate("x");
  r.chat["rules"].push_back({{"contains", "def total"}, {"response", {{"bugs", {finding("acc = acc + items")}}}}});
  r.chat["rules"].push_back({{"contains", "def join_all"}, {"response", {{"bugs", {finding("return sep.join(parts)")}}}}});
  std::vector<std::map<std::string, std::string>> runs;
  for (unsigned workers : {1u, 1u, 8u}) {
    r.config["workers"] = workers;
    run_scan(r.build());
    std::map<std::string, std::string> files;
    for (const auto& e : fs::directory_iterator(r.out())) files[e.path().filename().string()] = slurp(e.path());
    runs.push_back(std::move(files));
    fs::remove_all(r.out());
  }
  CHECK(runs[0].size() == 5);
  CHECK(runs[0] == runs[1]);
  CHECK(runs[0] == runs[2]);
}

TEST_CASE("synthesize then measure") {
  Repo r;
  r.config["synthesis"] = {{"policy", "deterministic_fallback"}};
  RunConfig c = r.build();
  const json s = run_synthesize(c);
  CHECK(s["functions"] == 4);
  CHECK(s["clean"] == 4);
  const std::size_t mutated = s["mutated"];
  CHECK(mutated + s["insufficient_candidates"].get<std::size_t>() == 4);
  const fs::path dataset = r.out() / "dataset.jsonl";
  REQUIRE(fs::exists(dataset));

  SUBCASE("echoing stage finds everything consistent") {
    MeasureOptions opts{{dataset}, std::string("local")};
    const json m = run_measure(c, opts);
    CHECK(m["infilling"]["clean"] == 4);
    CHECK(m["infilling"]["mutated"] == mutated);
    CHECK(m["infilling"]["specificity"] == 100.0);
    CHECK(m["infilling"]["recall"] == 0.0);
    CHECK(m["unscored"] == 0);
  }
  SUBCASE("exhausted stage flags everything") {
    r.local["default"] = "exhausted";
    c = r.build();
    const json m = run_measure(c, {{dataset}, std::string("local")});
    CHECK(m["infilling"]["recall"] == 100.0);
    CHECK(m["infilling"]["specificity"] == 0.0);
  }
  SUBCASE("template mode with an empty chat") {
    const json m = run_measure(c, {{dataset}, std::nullopt});
    CHECK(m["summary"]["mutated"]["tp_f"] == 0);
    CHECK(m["summary"]["mutated"]["fn_f"] == mutated);
    CHECK(m["summary"]["clean"]["tn_f"] == 4);
    CHECK(jsonl(r.out() / "outcomes.jsonl").size() == 4 + mutated);
    const std::string table = render_report({r.out() / "metrics.json"});
    CHECK(table.find("1/2FTCa+HL") != std::string::npos);
  }
  SUBCASE("template mode with an exact chat") {
    // The chat names the mutated line of every mutated sample.
    for (const auto& sample : read_dataset_jsonl(dataset)) {
      if (!sample.mutation) continue;
      const auto lines = text::split_lines(sample.function_text);
      const std::string code(lines.at(sample.mutation->line_no - sample.source_ref.first_line));
      r.chat["rules"].push_back({{"contains", std::string(text::trim(code))},
                                 {"response", {{"bugs", {finding(std::string(text::trim(code)))}}}}});
    }
    c = r.build();
    const json m = run_measure(c, {{dataset}, std::nullopt});
    CHECK(m["summary"]["mutated"]["recall_f"] == 100.0);
  }
}

TEST_CASE("measure rejects empty datasets") {
  Repo r;
  write_file(r.dir.path / "empty.jsonl", "");
  try {
    run_measure(r.build(), {{r.dir.path / "empty.jsonl"}, std::nullopt});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyInput);
  }
}

TEST_CASE("simulate-cost request") {
  const json req = json::parse(R"({
    "stages": [{"name": "a", "p": 0.8, "q": 0.98, "t": 5},
               {"name": "b", "p": 0.6, "q": 0.98, "t": 5},
               {"name": "gpt", "p": 0.442, "q": 0.84, "t": 10, "chat": true}],
    "n0": 1000, "order": ["a", "gpt"],
    "sweep": {"n_range": [1, 3], "top": 3},
    "monte_carlo": {"n0": 20000, "seed": 3}})");
  const json out = run_simulate_cost(req, 2);
  CHECK(out["order"] == json::array({"a", "gpt"}));
  CHECK(out["analytic"]["stages"].size() == 2);
  CHECK(out["sweep"]["ranked"].size() == 3);
  CHECK(out["monte_carlo"]["n0"] == 20000);
  CHECK(run_simulate_cost(req, 1) == run_simulate_cost(req, 4));
  json bad = req;
  bad["order"] = {"zzz"};
  CHECK_THROWS_AS(run_simulate_cost(bad), Error);
}

TEST_CASE("report renders a scan directory") {
  Repo r;
  for (const auto& id : task_ids(r.dir.path, "repo/pkg/math_utils.py", 11, "items")) r.local["tables"][id] = deviate("x");
  r.chat["rules"].push_back({{"contains", "def total"}, {"response", {{"bugs", {finding("acc = acc + items")}}}}});
  run_scan(r.build());
  const std::string text = render_report({r.out()});
  CHECK(text.find("repo/pkg/math_utils.py:11 in total") != std::string::npos);
  CHECK(text.find("acc = acc + item\n") != std::string::npos);
  CHECK(text.find("reported: 1") != std::string::npos);
}

TEST_CASE("measure scores a 500-pair infilling fixture") {
  // 500 paired functions; the scripted stage deviates on 455 mutated and 88
  // clean masks and echoes everything else.
  Repo r;
  Dataset d;
  const std::string head = "def f(a, b):\n    return a + ";
  for (int i = 0; i < 500; ++i) {
    const std::string name = "fn" + std::to_string(i);
    LabeledSample clean;
    clean.id = name + "-clean";
    clean.function_text = head + "b\n";
    clean.source_ref = {"mod.py", static_cast<std::uint32_t>(10 * i + 1), name, ""};
    LabeledSample mutated = clean;
    mutated.id = name + "-mutated";
    mutated.label = SampleLabel::Mutated;
    mutated.function_text = head + "a\n";
    mutated.mutation = Mutation{mutated.source_ref.first_line + 1, "b", "a", CodeTokenKind::VariableUse, head.size()};
    const ByteRange mask{head.size(), head.size() + 1};
    if (i < 455) r.local["tables"][make_task_id(mutated.id, mask, "a")] = deviate("b");
    if (i >= 412) r.local["tables"][make_task_id(clean.id, mask, "b")] = deviate("a");
    d.clean.push_back(std::move(clean));
    d.mutated.push_back(std::move(mutated));
  }
  write_dataset_jsonl(r.dir.path / "pairs.jsonl", d);
  r.config["workers"] = 4;
  const RunConfig c = r.build();
  const json m = run_measure(c, {{r.dir.path / "pairs.jsonl"}, std::string("local")});
  CHECK(m["unscored"] == 0);
  CHECK(m["infilling"]["mutated_inconsistent"] == 455);
  CHECK(m["infilling"]["clean_consistent"] == 412);
  CHECK(m["infilling"]["recall"] == 91.0);
  CHECK(m["infilling"]["specificity"] == 82.4);

  const std::string first = slurp(r.out() / "metrics.json");
  run_measure(c, {{r.dir.path / "pairs.jsonl"}, std::string("local")});
  CHECK(slurp(r.out() / "metrics.json") == first);
}

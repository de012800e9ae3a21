#include <doctest.h>

#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "tibscan/error.hpp"
#include "tibscan/synthesizer.hpp"
#include "tibscan/text.hpp"

using namespace tibscan;

namespace {

std::string read_file(const std::string& rel) {
  std::ifstream in(std::string(TIBSCAN_TEST_DATA) + "/" + rel, std::ios::binary);
  REQUIRE(in);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Task masking the n-th occurrence (0-based) of `needle` inside the unit's only function.
std::shared_ptr<InfillingTask> mask(const SourceUnitPtr& unit, std::string_view needle, CodeTokenKind kind,
                                    std::size_t nth = 0) {
  std::size_t seen = 0;
  for (const auto& tok : maskable_tokens(*unit, 0)) {
    if (tok.text != needle || tok.kind != kind) continue;
    if (seen++ != nth) continue;
    auto t = std::make_shared<InfillingTask>();
    t->unit = unit;
    t->mask = tok.range;
    t->original = tok.text;
    t->kind = tok.kind;
    t->line_no = text::LineIndex(unit->text).line_of(tok.range.begin);
    return t;
  }
  FAIL("token not found: " << needle);
  return nullptr;
}

std::vector<ScopeToken> vars(std::initializer_list<const char*> names) {
  std::vector<ScopeToken> out;
  for (const char* n : names) out.push_back({n, CodeTokenKind::VariableUse, "identifier", true});
  return out;
}

std::vector<std::string> texts(const std::vector<MutationCandidate>& cs) {
  std::vector<std::string> out;
  for (const auto& c : cs) out.push_back(c.substitute);
  return out;
}

MutationCandidate cand(const std::shared_ptr<const InfillingTask>& t, std::string s, double sim) {
  return {t, std::move(s), sim, true};
}

SourceUnitPtr corpus_unit(std::size_t functions, std::uint64_t salt = 0) {
  std::string src;
  for (std::size_t i = 0; i < functions; ++i) {
    src += "def f" + std::to_string(i) + "(a, b):\n";
    src += "    total = a + b * " + std::to_string(i + salt + 2) + "\n";
    src += "    if total >= a:\n        return total\n    return b\n\n";
  }
  return parse_unit("corpus.py", Language::Python, src);
}

std::vector<FunctionRef> all_functions(const std::vector<SourceUnitPtr>& units) {
  std::vector<FunctionRef> refs;
  for (const auto& u : units) {
    for (std::size_t i = 0; i < u->functions.size(); ++i) refs.push_back({u, i});
  }
  return refs;
}

}  // namespace

TEST_CASE("variable candidates come from scope and re-parse") {
  auto unit = parse_unit("quote_url.py", Language::Python, read_file("fixtures/quote_url.py"));
  auto task = mask(unit, "params", CodeTokenKind::VariableUse);  // inside quote(params)
  CHECK(task->line_no == 9);
  auto cs = enumerate_mutations(task, vars({"scheme", "netloc", "path", "query", "fragment", "params"}));
  CHECK(cs.size() == 5);
  for (const auto& c : cs) {
    CHECK(c.same_kind);
    CHECK(c.substitute != "params");
    CHECK(substitution_parses(*unit, task->mask, c.substitute, CodeTokenKind::VariableUse));
  }
  CHECK(texts(cs) == std::vector<std::string>{"fragment", "netloc", "path", "query", "scheme"});
}

TEST_CASE("same function scope wins over file scope") {
  auto unit = parse_unit("quote_url.py", Language::Python, read_file("fixtures/quote_url.py"));
  auto task = mask(unit, "params", CodeTokenKind::VariableUse);
  std::vector<ScopeToken> scope = vars({"query"});
  scope.push_back({"GLOBAL", CodeTokenKind::VariableUse, "identifier", false});
  CHECK(texts(enumerate_mutations(task, scope)) == std::vector<std::string>{"query"});
  scope = {{"GLOBAL", CodeTokenKind::VariableUse, "identifier", false}};
  CHECK(texts(enumerate_mutations(task, scope)) == std::vector<std::string>{"GLOBAL"});
  CHECK_THROWS_AS(enumerate_mutations(task, {}), Error);
}

TEST_CASE("operator candidates come from the operator table") {
  auto unit = parse_unit("cmp.py", Language::Python, "def f(a, b):\n    if a >= b:\n        return a\n    return b\n");
  auto task = mask(unit, ">=", CodeTokenKind::Operator);
  auto cs = enumerate_mutations(task, scope_tokens(*unit, 0));
  const auto got = texts(cs);
  for (const char* op : {"<=", ">", "<", "==", "!="}) {
    CHECK(std::find(got.begin(), got.end(), op) != got.end());
  }
  for (const auto& c : cs) {
    CHECK(substitution_parses(*unit, task->mask, c.substitute, CodeTokenKind::Operator));
    CHECK(c.substitute != ">=");
  }
}

TEST_CASE("integer literal candidates are the function's other integers") {
  const std::string src =
      "def pad(buf, n):\n"
      "    size = 128\n"
      "    if n > 64:\n"
      "        size = 256 + n * 2\n"
      "    name = 'x'\n"
      "    ratio = 0.5\n"
      "    return buf[:size] + b'0' * 3\n";
  auto unit = parse_unit("pad.py", Language::Python, src);
  auto task = mask(unit, "128", CodeTokenKind::Literal);
  const auto got = texts(enumerate_mutations(task, scope_tokens(*unit, 0)));

  // Independent oracle: decimal integer lexemes in the text, minus the original.
  std::set<std::string> want;
  const std::regex integer(R"((^|[^\w.'])(\d+)(?![\w.]))");
  for (auto it = std::sregex_iterator(src.begin(), src.end(), integer); it != std::sregex_iterator(); ++it) {
    if ((*it)[2] != "128") want.insert((*it)[2]);
  }
  CHECK(want == std::set<std::string>{"64", "256", "2", "3"});
  CHECK(std::set<std::string>(got.begin(), got.end()) == want);
}

TEST_CASE("selection policies") {
  auto unit = parse_unit("quote_url.py", Language::Python, read_file("fixtures/quote_url.py"));
  auto task = mask(unit, "params", CodeTokenKind::VariableUse);

  SUBCASE("embedding nearest") {
    const json fixture = json::parse(R"({"scores": {"params": {"query": 0.81, "path": 0.62, "scheme": 0.41}}})");
    FixtureEmbeddingProvider emb(fixture);
    auto cs = enumerate_mutations(task, vars({"scheme", "path", "query"}), &emb);
    CHECK(texts(cs) == std::vector<std::string>{"query", "path", "scheme"});
    CHECK(select_mutation(cs, SelectionPolicy::EmbeddingNearest).substitute == "query");
  }
  SUBCASE("identity scores are skipped") {
    std::vector<MutationCandidate> cs = {cand(task, "a", 1.0), cand(task, "b", 0.3)};
    CHECK(select_mutation(cs, SelectionPolicy::EmbeddingNearest).substitute == "b");
  }
  SUBCASE("single candidate") {
    std::vector<MutationCandidate> cs = {cand(task, "only", 0.1)};
    CHECK(select_mutation(cs, SelectionPolicy::EmbeddingNearest).substitute == "only");
    CHECK(select_mutation(cs, SelectionPolicy::DeterministicFallback).substitute == "only");
  }
  SUBCASE("fallback uses edit distance") {
    std::vector<MutationCandidate> cs = {cand(task, "query", 0), cand(task, "parameters", 0)};
    CHECK(text::levenshtein("params", "parameters") == 4);
    CHECK(text::levenshtein("params", "query") == 6);
    CHECK(select_mutation(cs, SelectionPolicy::DeterministicFallback).substitute == "parameters");
    std::vector<MutationCandidate> tie = {cand(task, "paramz", 0), cand(task, "paramb", 0)};
    CHECK(select_mutation(tie, SelectionPolicy::DeterministicFallback).substitute == "paramb");
  }
  SUBCASE("same kind preferred") {
    std::vector<MutationCandidate> cs = {cand(task, "param", 0), cand(task, "zzz", 0)};
    cs[0].same_kind = false;
    CHECK(select_mutation(cs, SelectionPolicy::DeterministicFallback).substitute == "zzz");
  }
  CHECK_THROWS_AS(select_mutation({}, SelectionPolicy::DeterministicFallback), Error);
}

TEST_CASE("cosine similarity") {
  CHECK(cosine_similarity({1, 0}, {1, 0}) == doctest::Approx(1.0));
  CHECK(cosine_similarity({1, 0}, {0, 1}) == doctest::Approx(0.0));
  CHECK(cosine_similarity({1, 1}, {1, 0}) == doctest::Approx(std::sqrt(0.5)));
  CHECK_THROWS_AS(cosine_similarity({1}, {1, 2}), Error);
}

TEST_CASE("dataset of ten mutable functions") {
  auto unit = corpus_unit(10);
  SynthesisOptions opts;
  opts.seed = 7;
  const Dataset d = build_dataset(all_functions({unit}), opts);
  CHECK(d.clean.size() == 10);
  CHECK(d.mutated.size() == 10);
  CHECK(d.insufficient == 0);

  std::map<std::string, const LabeledSample*> clean_by_ref;
  for (const auto& s : d.clean) {
    CHECK(s.label == SampleLabel::Clean);
    CHECK_FALSE(s.mutation);
    clean_by_ref[s.source_ref.function] = &s;
  }
  for (const auto& m : d.mutated) {
    CAPTURE(m.id);
    REQUIRE(m.mutation);
    const LabeledSample& c = *clean_by_ref.at(m.source_ref.function);
    CHECK(m.function_text != c.function_text);
    // Exactly one replacement at the recorded span.
    const auto& mu = *m.mutation;
    CHECK(c.function_text.substr(mu.offset, mu.original.size()) == mu.original);
    std::string rebuilt = c.function_text;
    rebuilt.replace(mu.offset, mu.original.size(), mu.substitute);
    CHECK(rebuilt == m.function_text);
    // Recorded line is the file line holding the span.
    const auto first = c.source_ref.first_line;
    const auto local = text::LineIndex(c.function_text).line_of(mu.offset);
    CHECK(mu.line_no == first + local - 1);
    // Mutated function still parses.
    auto reparsed = parse_unit("m.py", Language::Python, m.function_text);
    CHECK(reparsed->functions.size() == 1);
    CHECK(reparsed->skipped_functions.empty());
  }
}

TEST_CASE("unmutable functions stay in the clean set only") {
  auto unit = parse_unit("p.py", Language::Python, "def a():\n    pass\n\ndef b(x):\n    return x + 1\n");
  const Dataset d = build_dataset(all_functions({unit}), {});
  CHECK(d.clean.size() == 2);
  CHECK(d.mutated.size() == 1);
  CHECK(d.insufficient == 1);
}

TEST_CASE("dataset output is reproducible") {
  auto u1 = corpus_unit(12);
  auto u2 = parse_unit("other.py", Language::Python,
                       "def g(x, y):\n    z = x - y\n    return z < 0 or x == y\n");
  SynthesisOptions opts;
  opts.seed = 42;
  const std::string one = dataset_jsonl(build_dataset(all_functions({u1, u2}), opts));
  opts.workers = 8;
  const std::string eight = dataset_jsonl(build_dataset(all_functions({u2, u1}), opts));
  CHECK(one == eight);
  opts.seed = 43;
  CHECK(dataset_jsonl(build_dataset(all_functions({u1, u2}), opts)) != one);

  const auto path = std::filesystem::temp_directory_path() / "tibscan_dataset_test.jsonl";
  opts.seed = 42;
  const auto d = build_dataset(all_functions({u1, u2}), opts);
  write_dataset_jsonl(path, d);
  const auto back = read_dataset_jsonl(path);
  CHECK(back.size() == d.clean.size() + d.mutated.size());
  Dataset again;
  for (const auto& s : back) (s.label == SampleLabel::Clean ? again.clean : again.mutated).push_back(s);
  CHECK(dataset_jsonl(again) == one);
  std::filesystem::remove(path);
}

TEST_CASE("sample json validation") {
  CHECK_THROWS_AS(LabeledSample::from_json(json::parse(
                      R"({"id":"x","label":"mutated","language":"python","function_text":"def f(): pass"})")),
                  Error);
  CHECK_THROWS_AS(LabeledSample::from_json(json::parse(
                      R"({"id":"x","label":"weird","language":"python","function_text":""})")),
                  Error);
}

TEST_CASE("length decile sampling is proportional") {
  std::vector<std::size_t> lengths;
  for (std::size_t l = 100; l >= 1; --l) lengths.push_back(l);  // reversed to exercise the sort
  for (std::size_t n : {10u, 30u, 50u, 77u}) {
    CAPTURE(n);
    const auto picked = sample_by_length_decile(lengths, n, 5);
    CHECK(picked.size() == n);
    CHECK(std::set<std::size_t>(picked.begin(), picked.end()).size() == n);
    // Oracle: histogram over length bands 1-10, 11-20, ...
    std::map<std::size_t, std::size_t> hist;
    for (auto i : picked) hist[(lengths[i] - 1) / 10]++;
    for (std::size_t band = 0; band < 10; ++band) {
      const double share = static_cast<double>(hist[band]);
      CHECK(share >= static_cast<double>(n) / 10 - 1);
      CHECK(share <= static_cast<double>(n) / 10 + 1);
    }
  }
  CHECK(sample_by_length_decile(lengths, 30, 5) == sample_by_length_decile(lengths, 30, 5));
  CHECK(sample_by_length_decile(lengths, 200, 5).size() == 100);
}

TEST_CASE("sample_size draws a subset") {
  auto unit = corpus_unit(40);
  SynthesisOptions opts;
  opts.seed = 1;
  opts.sample_size = 10;
  const auto d = build_dataset(all_functions({unit}), opts);
  CHECK(d.clean.size() == 10);
  CHECK(d.mutated.size() == 10);
}

#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "syntax_tree.hpp"
#include "tibscan/error.hpp"
#include "tibscan/lexicon.hpp"
#include "tibscan/source.hpp"

using namespace tibscan;

namespace {

std::string fixture(const char* name) { return std::string(TIBSCAN_TEST_DATA) + "/fixtures/" + name; }

std::size_t count_kind(const std::vector<InfillingTask>& tasks, CodeTokenKind kind) {
  return static_cast<std::size_t>(
      std::count_if(tasks.begin(), tasks.end(), [&](const InfillingTask& t) { return t.kind == kind; }));
}

const InfillingTask* find_task(const std::vector<InfillingTask>& tasks, std::uint32_t line,
                               std::string_view original, CodeTokenKind kind) {
  for (const auto& t : tasks) {
    if (t.line_no == line && t.original == original && t.kind == kind) return &t;
  }
  return nullptr;
}

// Counts nodes by raw type in a subtree, independent of the catalog's rules.
// Anonymous leaves are also keyed as "parent>leaf".
void census(TSNode node, std::map<std::string, int>& counts) {
  counts[ts_node_type(node)]++;
  for (uint32_t i = 0; i < ts_node_child_count(node); ++i) {
    const TSNode child = ts_node_child(node, i);
    if (!ts_node_is_named(child)) counts[std::string(ts_node_type(node)) + ">" + ts_node_type(child)]++;
    census(child, counts);
  }
}

}  // namespace

TEST_CASE("quote_url parses into one function") {
  auto unit = load_unit(fixture("quote_url.py"));
  REQUIRE(unit->functions.size() == 1);
  CHECK(unit->functions[0].name == "quote_url");
  CHECK(unit->functions[0].line_range.first == 5);
  CHECK(unit->functions[0].line_range.last == 13);
}

TEST_CASE("empty file has no functions") {
  auto unit = parse_unit("empty.py", Language::Python, "");
  CHECK(unit->functions.empty());
}

TEST_CASE("unreadable and unparseable input") {
  CHECK_THROWS_AS(parse_unit("bad.py", Language::Python, "x = '\xff'"), Error);
  try {
    parse_unit("bad.py", Language::Python, std::string("a\0b", 3));
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnreadableFile);
  }
  try {
    parse_unit("junk.py", Language::Python, ")))) ((((( :::: ]]]");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::WholeFileParseFailure);
  }
  CHECK_THROWS_AS(load_unit("x.rs"), Error);
}

TEST_CASE("broken function is skipped, the rest survive") {
  const std::string src =
      "def good(a):\n    return a + 1\n\n"
      "def bad(b):\n    return b +* )\n\n"
      "def also_good(c):\n    return c\n";
  auto unit = parse_unit("m.py", Language::Python, src);
  REQUIRE(unit->functions.size() == 2);
  CHECK(unit->functions[0].name == "good");
  CHECK(unit->functions[1].name == "also_good");
  CHECK(unit->skipped_functions.size() == 1);
}

TEST_CASE("nested definitions collapse into outermost spans") {
  const std::string src =
      "def outer(a):\n"
      "    def middle(b):\n"
      "        def inner(c):\n"
      "            return c + 1\n"
      "        return inner(b) * 2\n"
      "    return middle(a)\n"
      "\n"
      "\n"
      "class Box:\n"
      "    def get(self):\n"
      "        return self.v\n"
      "\n"
      "    @staticmethod\n"
      "    def make(v):\n"
      "        return Box()\n"
      "\n"
      "\n"
      "def solo(x):\n"
      "    y = x\n"
      "    return y\n";
  auto unit = parse_unit("n.py", Language::Python, src);

  detail::SyntaxTree tree(Language::Python, unit->text);
  std::map<std::string, int> counts;
  census(tree.root(), counts);
  REQUIRE(counts["function_definition"] == 6);

  REQUIRE(unit->functions.size() == 4);
  CHECK(unit->functions[0].name == "outer");
  CHECK(unit->functions[1].name == "get");
  CHECK(unit->functions[2].name == "make");
  CHECK(unit->functions[3].name == "solo");
  CHECK(unit->functions[2].line_range.first == 13);  // decorator included
  for (std::size_t i = 1; i < unit->functions.size(); ++i) {
    CHECK(unit->functions[i - 1].byte_range.end <= unit->functions[i].byte_range.begin);
  }
  // Every def node lies inside exactly one span.
  int covered = 0;
  detail::walk(tree.root(), [&](const std::vector<detail::Frame>& stack) {
    const TSNode n = stack.back().node;
    if (detail::node_type(n) == "function_definition") {
      int hits = 0;
      for (const auto& fn : unit->functions) hits += fn.byte_range.contains(detail::node_range(n));
      CHECK(hits == 1);
      ++covered;
    }
    return true;
  });
  CHECK(covered == 6);

  auto tasks = enumerate_tasks(unit, ContextStrategy::Function).tasks;
  // Tokens of nested defs are masked once.
  CHECK(find_task(tasks, 4, "c", CodeTokenKind::VariableUse));
  CHECK(find_task(tasks, 5, "inner", CodeTokenKind::FunctionCall));
  CHECK(count_kind(tasks, CodeTokenKind::FunctionCall) == 3);
}

TEST_CASE("call line yields variable and callee tasks") {
  auto unit = load_unit(fixture("quote_url.py"));
  auto result = enumerate_tasks(unit, ContextStrategy::Function);
  const InfillingTask* arg = find_task(result.tasks, 9, "params", CodeTokenKind::VariableUse);
  const InfillingTask* call = find_task(result.tasks, 9, "quote", CodeTokenKind::FunctionCall);
  REQUIRE(arg);
  REQUIRE(call);
  // The binding `params_quoted` is not masked.
  CHECK_FALSE(find_task(result.tasks, 9, "params_quoted", CodeTokenKind::VariableUse));
  // Tuple-unpacking targets are bindings.
  CHECK_FALSE(find_task(result.tasks, 6, "scheme", CodeTokenKind::VariableUse));
  // Dotted callee: final attribute is the call, receivers are uses.
  CHECK(find_task(result.tasks, 6, "urlparse", CodeTokenKind::FunctionCall));
  CHECK(find_task(result.tasks, 6, "six", CodeTokenKind::VariableUse));
  CHECK(find_task(result.tasks, 6, "parse", CodeTokenKind::VariableUse));
  // Comments are never masked.
  CHECK_FALSE(find_task(result.tasks, 7, "netloc", CodeTokenKind::VariableUse));

  for (const auto& t : result.tasks) {
    CHECK(t.prefix + t.original + t.suffix == std::string(unit->snippet(t.function())));
    CHECK(unit->text.substr(t.mask.begin, t.mask.size()) == t.original);
    CHECK(substitution_parses(*unit, t.mask, t.original, t.kind));
  }
}

TEST_CASE("10-line function: hand tally and independent census") {
  const std::string src =
      "def scale(values, factor=2):\n"
      "    total = 0\n"
      "    for v in values:\n"
      "        if v >= 128 and factor:\n"
      "            total += v * factor\n"
      "        else:\n"
      "            total = total - 1\n"
      "    name = \"sum\"\n"
      "    print(name, total)\n"
      "    return total\n";
  auto unit = parse_unit("s.py", Language::Python, src);
  auto tasks = enumerate_tasks(unit, ContextStrategy::Function).tasks;
  CHECK(count_kind(tasks, CodeTokenKind::VariableUse) == 10);
  CHECK(count_kind(tasks, CodeTokenKind::FunctionCall) == 1);
  CHECK(count_kind(tasks, CodeTokenKind::Operator) == 5);
  CHECK(count_kind(tasks, CodeTokenKind::Literal) == 5);

  // Census: literals and masked operators are syntactic leaves that need no
  // binding analysis, so a raw type count must agree.
  detail::SyntaxTree tree(Language::Python, unit->text);
  std::map<std::string, int> counts;
  census(tree.root(), counts);
  const int literal_leaves = counts["integer"] + counts["float"] + counts["string"];
  int operator_leaves = 0;
  for (const auto& entry : lexicon::operators(Language::Python)) {
    for (const char* parent : {"binary_operator", "comparison_operator", "boolean_operator",
                               "augmented_assignment"}) {
      operator_leaves += counts[std::string(parent) + ">" + std::string(entry.text)];
    }
  }
  CHECK(static_cast<int>(count_kind(tasks, CodeTokenKind::Literal)) == literal_leaves);
  CHECK(static_cast<int>(count_kind(tasks, CodeTokenKind::Operator)) == operator_leaves);
  // Identifier leaves minus the binding occurrences counted by hand
  // (scale, values, factor, total, v, total, name) give uses plus callees.
  CHECK(static_cast<int>(count_kind(tasks, CodeTokenKind::VariableUse) +
                         count_kind(tasks, CodeTokenKind::FunctionCall)) ==
        counts["identifier"] - 7);

  auto order = tasks;
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a.mask.begin < b.mask.begin; });
  for (std::size_t i = 0; i < tasks.size(); ++i) CHECK(order[i].task_id == tasks[i].task_id);
}

TEST_CASE("function with only pass has no tasks") {
  auto unit = parse_unit("p.py", Language::Python, "def noop():\n    pass\n");
  CHECK(enumerate_tasks(unit, ContextStrategy::Function).tasks.empty());
}

TEST_CASE("python binding forms are skipped") {
  const std::string src =
      "def f(a, *rest, b: int = 3, **kw):\n"
      "    with open(a) as fh:\n"
      "        data = fh.read()\n"
      "    self_ok = [x for x in rest if x]\n"
      "    g = lambda y: y + b\n"
      "    obj.attr = kw\n"
      "    try:\n"
      "        pass\n"
      "    except ValueError as err:\n"
      "        raise err\n"
      "    if (n := len(data)) > 1:\n"
      "        return g(n)\n"
      "    return call(key=data)\n";
  auto unit = parse_unit("b.py", Language::Python, src);
  auto tasks = enumerate_tasks(unit, ContextStrategy::Function).tasks;
  auto has = [&](std::uint32_t line, std::string_view text) {
    for (const auto& t : tasks) {
      if (t.line_no == line && t.original == text) return true;
    }
    return false;
  };
  CHECK_FALSE(has(1, "a"));
  CHECK_FALSE(has(1, "rest"));
  CHECK_FALSE(has(1, "b"));
  CHECK_FALSE(has(1, "int") == false);  // annotations are uses
  CHECK(has(1, "3"));
  CHECK_FALSE(has(1, "kw"));
  CHECK(has(2, "a"));
  CHECK(has(2, "open"));
  CHECK_FALSE(has(2, "fh"));
  CHECK(has(3, "fh"));
  CHECK(has(3, "read"));
  CHECK_FALSE(has(3, "data"));
  CHECK(has(4, "rest"));
  CHECK_FALSE(has(4, "self_ok"));
  CHECK_FALSE(has(5, "g"));
  CHECK(has(5, "b"));
  CHECK(has(6, "obj"));
  CHECK_FALSE(has(6, "attr"));
  CHECK(has(6, "kw"));
  CHECK(has(9, "ValueError"));
  CHECK_FALSE(has(9, "err"));
  CHECK(has(10, "err"));
  CHECK(has(11, "data"));
  CHECK(has(12, "n"));
  CHECK_FALSE(has(13, "key"));
  CHECK(has(13, "data"));
}

TEST_CASE("C tokens") {
  const std::string src =
      "#include <stdio.h>\n"
      "#define MAX 10\n"
      "struct node { int val; struct node *next; };\n"
      "int sum(struct node *head, int limit) {\n"
      "    int total = 0;\n"
      "    for (struct node *p = head; p != NULL; p = p->next) {\n"
      "        if (p->val <= limit && total < MAX)\n"
      "            total += p->val;\n"
      "    }\n"
      "    printf(\"%d\\n\", total);\n"
      "    return total;\n"
      "}\n";
  auto unit = parse_unit("s.c", Language::C, src);
  REQUIRE(unit->functions.size() == 1);
  CHECK(unit->functions[0].name == "sum");
  auto tasks = enumerate_tasks(unit, ContextStrategy::Function).tasks;
  CHECK_FALSE(find_task(tasks, 4, "head", CodeTokenKind::VariableUse));
  CHECK_FALSE(find_task(tasks, 5, "total", CodeTokenKind::VariableUse));
  CHECK(find_task(tasks, 5, "0", CodeTokenKind::Literal));
  CHECK(find_task(tasks, 6, "head", CodeTokenKind::VariableUse));
  CHECK(find_task(tasks, 6, "!=", CodeTokenKind::Operator));
  CHECK(find_task(tasks, 6, "next", CodeTokenKind::VariableUse));
  CHECK(find_task(tasks, 7, "<=", CodeTokenKind::Operator));
  CHECK(find_task(tasks, 7, "&&", CodeTokenKind::Operator));
  CHECK(find_task(tasks, 7, "MAX", CodeTokenKind::VariableUse));
  CHECK(find_task(tasks, 8, "+=", CodeTokenKind::Operator));
  CHECK(find_task(tasks, 10, "printf", CodeTokenKind::FunctionCall));
  CHECK(find_task(tasks, 10, "\"%d\\n\"", CodeTokenKind::Literal));
  for (const auto& t : tasks) {
    CHECK(t.prefix + t.original + t.suffix == std::string(unit->snippet(t.function())));
    CHECK(substitution_parses(*unit, t.mask, t.original, t.kind));
  }
}

TEST_CASE("sliced context, python") {
  const std::string src =
      "import os\n"
      "G = 10\n"
      "\n"
      "def f(x):\n"
      "    return x + G\n"
      "\n"
      "def g(y, z=1):\n"
      "    return y * z\n"
      "\n"
      "class K:\n"
      "    LIMIT = 3\n"
      "\n"
      "    def m(self):\n"
      "        return self.LIMIT\n"
      "H = os.sep\n";
  auto unit = parse_unit("sl.py", Language::Python, src);
  REQUIRE(unit->functions.size() == 3);
  auto ext = slice_file_context(*unit, 0);
  CHECK(ext.prefix == "import os\nG = 10\n");
  CHECK(ext.suffix == "\ndef g(y, z=1): ...\nclass K:\n    LIMIT = 3\n    def m(self): ...\nH = os.sep");
  CHECK(ext.suffix.find("return y") == std::string::npos);

  auto tasks = enumerate_tasks(unit, ContextStrategy::SlicedFile).tasks;
  for (const auto& t : tasks) {
    const auto e = slice_file_context(*unit, t.function_index);
    CHECK(t.prefix + t.original + t.suffix == e.prefix + std::string(unit->snippet(t.function())) + e.suffix);
  }
  auto file_tasks = enumerate_tasks(unit, ContextStrategy::File).tasks;
  REQUIRE(file_tasks.size() == tasks.size());
  for (const auto& t : file_tasks) CHECK(t.prefix + t.original + t.suffix == unit->text);

  auto only = parse_unit("o.py", Language::Python, "def f(x):\n    return x\n");
  auto none = slice_file_context(*only, 0);
  CHECK(none.prefix.empty());
  CHECK(none.suffix.empty());
}

TEST_CASE("sliced context, C") {
  const std::string src =
      "#include <stdio.h>\n"
      "#define MAX 10\n"
      "int helper(int a);\n"
      "static int counter = 0;\n"
      "\n"
      "int f(int x) {\n"
      "    return x + MAX + helper(x);\n"
      "}\n"
      "\n"
      "int helper(int a) {\n"
      "    return a * 2;\n"
      "}\n";
  auto unit = parse_unit("sl.c", Language::C, src);
  REQUIRE(unit->functions.size() == 2);
  auto ext = slice_file_context(*unit, 0);
  CHECK(ext.prefix == "#include <stdio.h>\n#define MAX 10\nint helper(int a);\nstatic int counter = 0;\n");
  CHECK(ext.suffix == "\nint helper(int a);");
}

TEST_CASE("context limit drops tasks") {
  auto unit = load_unit(fixture("quote_url.py"));
  TaskLimits limits;
  limits.max_context_tokens = 10;
  auto result = enumerate_tasks(unit, ContextStrategy::Function, limits);
  CHECK(result.tasks.empty());
  CHECK(result.dropped_too_long > 0);
  CHECK(result.dropped_too_long == enumerate_tasks(unit, ContextStrategy::Function).tasks.size());
}

TEST_CASE("task ids are stable and distinct") {
  auto unit = load_unit(fixture("quote_url.py"));
  auto a = enumerate_tasks(unit, ContextStrategy::Function).tasks;
  auto b = enumerate_tasks(load_unit(fixture("quote_url.py")), ContextStrategy::Function).tasks;
  REQUIRE(a.size() == b.size());
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].task_id == b[i].task_id);
    ids.insert(a[i].task_id);
  }
  CHECK(ids.size() == a.size());
}

TEST_CASE("AST similarity gating in C") {
  const std::string src =
      "int add_a(int x, int y) { int r = x + y; if (r > 10) r = 10; return r; }\n"
      "int add_b(int p, int q) { int s = p + q; if (s > 20) s = 20; return s; }\n"
      "void other(char *s) { while (*s) { s++; } puts(\"done\"); for (;;) break; }\n";
  auto unit = parse_unit("g.c", Language::C, src);
  REQUIRE(unit->functions.size() == 3);
  CHECK(structural_similarity(*unit, 0, 1) == doctest::Approx(1.0));
  CHECK(structural_similarity(*unit, 0, 2) < 0.8);
  TaskLimits limits;
  limits.ast_similarity_gating = true;
  auto gated = enumerate_tasks(unit, ContextStrategy::Function, limits);
  for (const auto& t : gated.tasks) CHECK(t.function_index != 2);
  CHECK(gated.gated_out > 0);
}

TEST_CASE("substitution re-parse") {
  auto unit = load_unit(fixture("quote_url.py"));
  auto tasks = enumerate_tasks(unit, ContextStrategy::Function).tasks;
  const InfillingTask* arg = find_task(tasks, 9, "params", CodeTokenKind::VariableUse);
  REQUIRE(arg);
  CHECK(substitution_parses(*unit, arg->mask, "query", CodeTokenKind::VariableUse));
  CHECK_FALSE(substitution_parses(*unit, arg->mask, "query query", CodeTokenKind::VariableUse));
  CHECK_FALSE(substitution_parses(*unit, arg->mask, "1", CodeTokenKind::VariableUse));
  CHECK_FALSE(substitution_parses(*unit, arg->mask, "(", CodeTokenKind::VariableUse));
}

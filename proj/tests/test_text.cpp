#include <doctest.h>

#include "tibscan/rng.hpp"
#include "tibscan/text.hpp"

using namespace tibscan;

TEST_CASE("utf8 validation") {
  CHECK(text::is_valid_utf8("plain"));
  CHECK(text::is_valid_utf8("caf\xc3\xa9"));
  CHECK_FALSE(text::is_valid_utf8("\xc3"));
  CHECK_FALSE(text::is_valid_utf8("\xc0\xaf"));
  CHECK_FALSE(text::is_valid_utf8("\xed\xa0\x80"));
}

TEST_CASE("line index") {
  const std::string s = "ab\ncd\n\nef";
  text::LineIndex idx(s);
  CHECK(idx.line_count() == 4);
  CHECK(idx.line_of(0) == 1);
  CHECK(idx.line_of(2) == 1);
  CHECK(idx.line_of(3) == 2);
  CHECK(idx.line_of(6) == 3);
  CHECK(idx.line_of(7) == 4);
  CHECK(idx.line_start(2) == 3);
  CHECK(idx.line_end(2) == 5);
  CHECK(idx.line_end(4) == s.size());
}

TEST_CASE("levenshtein") {
  CHECK(text::levenshtein("", "abc") == 3);
  CHECK(text::levenshtein("kitten", "sitting") == 3);
  CHECK(text::levenshtein("params", "query") == 6);
  CHECK(text::levenshtein("params", "parameters") == 4);
}

TEST_CASE("whitespace helpers") {
  CHECK(text::normalize_whitespace("  a \t b\n") == "a b");
  CHECK(text::trim("\t x y  ") == "x y");
  CHECK(text::split_lines("a\nb\n").size() == 2);
  CHECK(text::split_lines("a\n\nb").size() == 3);
}

TEST_CASE("glob") {
  CHECK(text::glob_match("*.py", "a.py"));
  CHECK_FALSE(text::glob_match("*.py", "d/a.py"));
  CHECK(text::glob_match("**/*.py", "a.py"));
  CHECK(text::glob_match("**/*.py", "d/e/a.py"));
  CHECK(text::glob_match("vendor/**", "vendor/x/y.c"));
  CHECK(text::glob_match("?.c", "a.c"));
  CHECK_FALSE(text::glob_match("?.c", "ab.c"));
}

TEST_CASE("fnv1a known vectors") {
  CHECK(text::fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(text::fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(text::hex64(255) == "00000000000000ff");
}

TEST_CASE("rng is reproducible and bounded") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    CHECK(c.below(10) < 10);
    const double u = c.uniform();
    CHECK((u >= 0.0 && u < 1.0));
  }
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
}

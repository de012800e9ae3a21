#include <doctest.h>

#include "tibscan/consistency.hpp"
#include "tibscan/error.hpp"

#include <map>

using namespace tibscan;

namespace {

std::shared_ptr<InfillingTask> make_task(std::string original, CodeTokenKind kind = CodeTokenKind::VariableUse,
                                         Language lang = Language::Python) {
  auto unit = parse_unit("t.py", lang, "");
  auto task = std::make_shared<InfillingTask>();
  task->task_id = "t1";
  task->unit = unit;
  task->original = std::move(original);
  task->kind = kind;
  return task;
}

// Backend that replays rows keyed by the forced text.
class TableBackend : public CompletionBackend {
 public:
  std::map<std::string, PredictionStep> rows;
  int calls = 0;
  PredictionStep next_step(const GenerationSession& s, std::size_t k) override {
    ++calls;
    auto it = rows.find(s.forced_text());
    PredictionStep step = it == rows.end() ? PredictionStep{} : it->second;
    normalize_step(step, k);
    return step;
  }
  const BackendProfile& profile() const noexcept override { return profile_; }
  BackendProfile profile_{};
};

}  // namespace

TEST_CASE("validate_token") {
  CHECK(validate_token("par", CodeTokenKind::VariableUse, Language::Python));
  CHECK_FALSE(validate_token("\"\"\"", CodeTokenKind::VariableUse, Language::Python));
  CHECK(validate_token("0x1F", CodeTokenKind::Literal, Language::C));
  CHECK(validate_token("0x1Fu", CodeTokenKind::Literal, Language::C));
  CHECK_FALSE(validate_token("0x1G", CodeTokenKind::Literal, Language::C));
  CHECK(validate_token("ams", CodeTokenKind::VariableUse, Language::Python, "par"));
  CHECK_FALSE(validate_token("1abc", CodeTokenKind::VariableUse, Language::Python));
  CHECK(validate_token("abc1", CodeTokenKind::VariableUse, Language::Python));
  CHECK(validate_token("1", CodeTokenKind::VariableUse, Language::Python, "abc"));
  CHECK_FALSE(validate_token(" x", CodeTokenKind::VariableUse, Language::Python));
  CHECK(validate_token(">=", CodeTokenKind::Operator, Language::Python));
  CHECK(validate_token("=", CodeTokenKind::Operator, Language::Python, ">"));
  CHECK_FALSE(validate_token("=>", CodeTokenKind::Operator, Language::Python));
  CHECK(validate_token("an", CodeTokenKind::Operator, Language::Python));
  CHECK_FALSE(validate_token("&&", CodeTokenKind::Operator, Language::Python));
  CHECK(validate_token("&&", CodeTokenKind::Operator, Language::C));
  CHECK(validate_token("\"abc", CodeTokenKind::Literal, Language::Python));
  CHECK(validate_token("1_000", CodeTokenKind::Literal, Language::Python));
  CHECK(validate_token("1e-", CodeTokenKind::Literal, Language::Python));
  CHECK_FALSE(validate_token("\"a\"b", CodeTokenKind::Literal, Language::Python));
  CHECK_FALSE(validate_token("", CodeTokenKind::VariableUse, Language::Python));
}

TEST_CASE("perfect match is consistent") {
  TableBackend b;
  b.rows[""] = {{{"params", 0.97}, {"query", 0.01}}};
  auto v = check_consistency(make_task("params"), b);
  CHECK(v.consistent);
  CHECK(v.rank_sum == 0);
  CHECK(v.steps_taken == 1);
  CHECK_FALSE(v.deviation);
}

TEST_CASE("confident deviation stops immediately") {
  TableBackend b;
  b.rows[""] = {{{"query", 0.95}, {"params", 0.04}}};
  auto v = check_consistency(make_task("params"), b);
  CHECK_FALSE(v.consistent);
  REQUIRE(v.deviation);
  CHECK(v.deviation->step == 1);
  CHECK(v.deviation->token == "query");
  CHECK(v.deviation->prob == doctest::Approx(0.95));
  CHECK(v.reason == VerdictReason::ConfidentDeviation);
}

TEST_CASE("two charged steps exceed rank threshold") {
  TableBackend b;
  b.rows[""] = {{{"qu", 0.5}, {"pa", 0.3}}};
  b.rows["pa"] = {{{"th", 0.5}, {"rams", 0.3}}};
  auto v = check_consistency(make_task("params"), b);
  CHECK_FALSE(v.consistent);
  CHECK(v.rank_sum == 2);
  CHECK(v.reason == VerdictReason::RankExceeded);
}

TEST_CASE("split tokenization is consistent") {
  TableBackend b;
  b.rows[""] = {{{"par", 0.8}}};
  b.rows["par"] = {{{"ams", 0.9}}};
  auto v = check_consistency(make_task("params"), b);
  CHECK(v.consistent);
  CHECK(v.steps_taken == 2);
}

TEST_CASE("invalid candidates are skipped without charge") {
  TableBackend b;
  b.rows[""] = {{{"\"\"\"", 0.99}, {"(", 0.5}, {"params", 0.3}}};
  auto v = check_consistency(make_task("params"), b);
  CHECK(v.consistent);
  CHECK(v.rank_sum == 0);
}

TEST_CASE("no valid candidate is inconsistent") {
  TableBackend b;
  b.rows[""] = {{{"\"\"\"", 0.99}}};
  auto v = check_consistency(make_task("params"), b);
  CHECK_FALSE(v.consistent);
  CHECK(v.reason == VerdictReason::Exhausted);
  CHECK(v.deviation);
}

TEST_CASE("step cap") {
  // Each step charges nothing but never matches: the same row repeats with
  // an unlimited rank budget.
  TableBackend b;
  b.rows[""] = {{{"zz", 0.2}}};
  ConsistencyConfig cfg;
  cfg.rank_thresh = 1000;
  auto v = check_consistency(make_task("params"), b, cfg);
  CHECK_FALSE(v.consistent);
  CHECK(v.reason == VerdictReason::StepCap);
  CHECK(v.steps_taken == 16);
  CHECK(b.calls == 16);
}

TEST_CASE("config validation") {
  ConsistencyConfig cfg;
  cfg.prob_thresh = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.prob_thresh = 0.5;
  cfg.k = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

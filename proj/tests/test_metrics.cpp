#include <doctest.h>

#include "tibscan/metrics.hpp"

using namespace tibscan;

namespace {

LabeledSample sample(std::string id, bool mutated, std::uint32_t line = 5) {
  LabeledSample s;
  s.id = std::move(id);
  s.label = mutated ? SampleLabel::Mutated : SampleLabel::Clean;
  s.function_text = "def f():\n    pass\n";
  if (mutated) s.mutation = Mutation{line, "a", "b", CodeTokenKind::VariableUse, 0};
  return s;
}

BugFinding at(std::optional<std::uint32_t> line) {
  BugFinding f;
  f.code_line = "x";
  f.explanation = "y";
  f.resolved_line_no = line;
  return f;
}

MetricsSummary counts(std::size_t tp_f, std::size_t fn_f, std::size_t fp_l, std::size_t excluded_fp_l) {
  MetricsSummary m;
  m.tp_f = tp_f;
  m.fn_f = fn_f;
  m.fp_l = fp_l;
  m.excluded_fp_l = excluded_fp_l;
  m.clean_samples = 100;
  m.derive();
  return m;
}

}  // namespace

TEST_CASE("percent arithmetic on reference counts") {
  CHECK(counts(72, 28, 404, 0).recall_f == 72.0);
  CHECK(counts(72, 28, 404, 0).specificity_l == 0.0);
  CHECK(counts(71, 29, 229, 67).specificity_l == 22.6);
  CHECK(counts(72, 28, 294, 92).specificity_l == 23.8);
  CHECK(counts(84, 16, 174, 138).recall_f == 84.0);
  CHECK(counts(84, 16, 174, 138).specificity_l == 44.2);
  CHECK(precision(314, 74) == 23.57);
  CHECK(precision(77, 28) == 36.36);
  CHECK_FALSE(precision(0, 0));
  CHECK_FALSE(percent(1, 0));
}

TEST_CASE("nothing to exclude reads as full specificity") {
  const auto m = score_run({sample("c1", false), sample("c2", false)}, {});
  CHECK(m.fp_l == 0);
  CHECK(m.excluded_fp_l == 0);
  CHECK(m.specificity_l == 100.0);
  CHECK(m.tn_f == 2);
  CHECK_FALSE(m.recall_f);
}

TEST_CASE("score_run tallies") {
  std::vector<LabeledSample> d = {sample("m1", true, 5), sample("m2", true, 5), sample("m3", true, 7),
                                  sample("m4", true, 3), sample("c1", false), sample("c2", false),
                                  sample("c3", false)};
  std::unordered_map<std::string, SampleOutcome> out;
  out["m1"].kept = {at(5), at(5), at(9)};  // hit plus one wrong line
  out["m2"].kept = {at(6), at(std::nullopt)};  // wrong lines only
  out["m3"].schema_failure = true;
  // m4 has no findings at all
  out["c1"].raw = {at(2), at(3), at(4)};
  out["c1"].kept = {at(2)};
  out["c2"].raw = {at(1)};  // all excluded
  out["c3"].raw = {};
  const auto m = score_run(d, out);

  CHECK(m.mutated_samples == 4);
  CHECK(m.tp_l == 1);
  CHECK(m.fp_l_mutated == 3);  // 9, 6, unresolved
  CHECK(m.fn_l == 3);
  CHECK(m.tp_f == 1);
  CHECK(m.fp_f_mutated == 1);
  CHECK(m.fn_f == 3);
  CHECK(m.schema_failures == 1);
  CHECK(m.recall_f == 25.0);

  CHECK(m.clean_samples == 3);
  CHECK(m.fp_l == 1);
  CHECK(m.excluded_fp_l == 3);
  CHECK(m.fp_f == 1);
  CHECK(m.excluded_fp_f == 1);
  CHECK(m.tn_f == 2);
  CHECK(m.specificity_l == 75.0);
  CHECK(m.tp_f <= m.mutated_samples);

  const auto j = m.to_json();
  CHECK(j["mutated"]["recall_f"] == 25.0);
  CHECK(j["clean"]["excluded_fp_f"] == 1);
}

TEST_CASE("infilling scores against a hand tally") {
  std::vector<LabeledVerdict> v = {
      {SampleLabel::Mutated, false}, {SampleLabel::Mutated, false}, {SampleLabel::Mutated, true},
      {SampleLabel::Mutated, false}, {SampleLabel::Clean, true},    {SampleLabel::Clean, true},
      {SampleLabel::Clean, false},   {SampleLabel::Clean, true},    {SampleLabel::Mutated, false},
      {SampleLabel::Clean, false},
  };
  std::size_t mut = 0, caught = 0, clean = 0, passed = 0;
  for (const auto& x : v) {
    if (x.label == SampleLabel::Mutated) {
      ++mut;
      caught += !x.consistent;
    } else {
      ++clean;
      passed += x.consistent;
    }
  }
  const auto s = score_infilling(v);
  CHECK(s.recall == percent(caught, mut));
  CHECK(s.specificity == percent(passed, clean));
  CHECK(s.recall == 80.0);
  CHECK(s.specificity == 60.0);

  std::vector<LabeledVerdict> ninety_eight;
  for (int i = 0; i < 100; ++i) ninety_eight.push_back({SampleLabel::Mutated, i < 2});
  CHECK(score_infilling(ninety_eight).recall == 98.0);
  std::vector<LabeledVerdict> clean_ok(5, {SampleLabel::Clean, true});
  CHECK(score_infilling(clean_ok).specificity == 100.0);
}

TEST_CASE("metrics table layout") {
  const auto table = format_metrics_table({{"1", counts(72, 28, 404, 0)}, {"1/2FTCa", counts(72, 28, 294, 92)}});
  CHECK(table.find("Rec.") != std::string::npos);
  CHECK(table.find("23.8") != std::string::npos);
  CHECK(table.find("72.0") != std::string::npos);
  // Every row has the same width up to the separator column.
  std::vector<std::size_t> bars;
  std::size_t pos = 0;
  while ((pos = table.find('|', pos)) != std::string::npos) {
    bars.push_back(pos - (table.rfind('\n', pos) == std::string::npos ? 0 : table.rfind('\n', pos) + 1));
    ++pos;
  }
  REQUIRE(bars.size() == 3);
  CHECK(bars[0] == bars[1]);
  CHECK(bars[1] == bars[2]);
}

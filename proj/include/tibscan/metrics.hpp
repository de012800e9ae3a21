#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tibscan/consistency.hpp"
#include "tibscan/prompt.hpp"
#include "tibscan/synthesizer.hpp"

namespace tibscan {

/// Percent 100*num/den rounded to one decimal place; nullopt when den is 0.
std::optional<double> percent(std::size_t num, std::size_t den);

struct MetricsSummary {
  // Mutated set.
  std::size_t mutated_samples = 0;
  std::size_t tp_l = 0;  // flagged lines equal to the mutation line
  std::size_t fp_l_mutated = 0;  // other flagged lines, unresolved ones included
  std::size_t fn_l = 0;  // mutation lines left unflagged
  std::size_t tp_f = 0;
  std::size_t fp_f_mutated = 0;  // samples whose findings all sit on wrong lines
  std::size_t fn_f = 0;  // every mutated sample that is not tp_f
  std::size_t schema_failures = 0;  // counted in fn_f

  // Clean set.
  std::size_t clean_samples = 0;
  std::size_t fp_l = 0;           // findings kept after filtering
  std::size_t excluded_fp_l = 0;  // findings removed by the filter
  std::size_t fp_f = 0;           // samples with a kept finding
  std::size_t excluded_fp_f = 0;  // samples whose findings were all removed
  std::size_t tn_f = 0;           // samples with no kept finding
  std::size_t clean_schema_failures = 0;

  std::optional<double> recall_f;
  /// 100 by convention when there was nothing to exclude.
  std::optional<double> specificity_l;

  /// Fills recall_f and specificity_l from the counts.
  void derive();
  json to_json() const;
};

/// What one chat exchange produced for one sample.
struct SampleOutcome {
  std::vector<BugFinding> raw;   // before filter_findings
  std::vector<BugFinding> kept;  // after
  bool schema_failure = false;
};

/// Samples without an entry in `outcomes` count as having no findings.
MetricsSummary score_run(const std::vector<LabeledSample>& dataset,
                         const std::unordered_map<std::string, SampleOutcome>& outcomes);

/// 100*correct/reports, two decimals.
std::optional<double> precision(std::size_t reports, std::size_t correct);

struct InfillingScore {
  std::size_t mutated = 0;
  std::size_t mutated_inconsistent = 0;
  std::size_t clean = 0;
  std::size_t clean_consistent = 0;
  std::optional<double> recall;
  std::optional<double> specificity;

  json to_json() const;
};

struct LabeledVerdict {
  SampleLabel label = SampleLabel::Clean;
  bool consistent = true;
};

InfillingScore score_infilling(const std::vector<LabeledVerdict>& verdicts);

/// Aligned text table, one row per named summary, in the column order
/// TP_L FP_L TP_F FP_F Rec. | FP_L E.FP_L FP_F E.FP_F Spe.
std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsSummary>>& rows);

}  // namespace tibscan

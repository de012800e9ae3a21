#include "tibscan/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "tibscan/log.hpp"

namespace tibscan {

namespace {

double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(v * scale) / scale;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// Distinct flagged lines of a finding list; unresolved findings count one each.
struct LineTally {
  std::set<std::uint32_t> lines;
  std::size_t unresolved = 0;

  explicit LineTally(const std::vector<BugFinding>& findings) {
    for (const auto& f : findings) {
      if (f.resolved_line_no) {
        lines.insert(*f.resolved_line_no);
      } else {
        ++unresolved;
      }
    }
  }
  std::size_t total() const { return lines.size() + unresolved; }
};

}  // namespace

std::optional<double> percent(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return round_to(100.0 * static_cast<double>(num) / static_cast<double>(den), 1);
}

std::optional<double> precision(std::size_t reports, std::size_t correct) {
  if (reports == 0) return std::nullopt;
  return round_to(100.0 * static_cast<double>(correct) / static_cast<double>(reports), 2);
}

void MetricsSummary::derive() {
  recall_f = percent(tp_f, tp_f + fn_f);
  specificity_l = percent(excluded_fp_l, fp_l + excluded_fp_l);
  if (!specificity_l && clean_samples > 0) {
    log::info("no findings on the clean set; specificity reported as 100");
    specificity_l = 100.0;
  }
}

json MetricsSummary::to_json() const {
  return {
      {"mutated",
       {{"samples", mutated_samples},
        {"tp_l", tp_l},
        {"fp_l", fp_l_mutated},
        {"fn_l", fn_l},
        {"tp_f", tp_f},
        {"fp_f", fp_f_mutated},
        {"fn_f", fn_f},
        {"schema_failures", schema_failures},
        {"recall_f", opt(recall_f)}}},
      {"clean",
       {{"samples", clean_samples},
        {"fp_l", fp_l},
        {"excluded_fp_l", excluded_fp_l},
        {"fp_f", fp_f},
        {"excluded_fp_f", excluded_fp_f},
        {"tn_f", tn_f},
        {"schema_failures", clean_schema_failures},
        {"specificity_l", opt(specificity_l)}}},
  };
}

MetricsSummary score_run(const std::vector<LabeledSample>& dataset,
                         const std::unordered_map<std::string, SampleOutcome>& outcomes) {
  static const SampleOutcome kNone;
  MetricsSummary m;
  for (const auto& sample : dataset) {
    const auto it = outcomes.find(sample.id);
    const SampleOutcome& out = it == outcomes.end() ? kNone : it->second;
    const LineTally kept(out.kept);
    if (sample.label == SampleLabel::Mutated) {
      ++m.mutated_samples;
      if (out.schema_failure) {
        ++m.schema_failures;
        ++m.fn_f;
        ++m.fn_l;
        log::info("sample ", sample.id, ": schema failure counted as a miss");
        continue;
      }
      const bool hit = kept.lines.count(sample.mutation->line_no) > 0;
      m.tp_l += hit ? 1 : 0;
      m.fn_l += hit ? 0 : 1;
      m.fp_l_mutated += kept.total() - (hit ? 1 : 0);
      if (hit) {
        ++m.tp_f;
      } else {
        ++m.fn_f;
        if (kept.total() > 0) ++m.fp_f_mutated;
      }
    } else {
      ++m.clean_samples;
      if (out.schema_failure) {
        ++m.clean_schema_failures;
        ++m.tn_f;
        continue;
      }
      const LineTally raw(out.raw);
      m.fp_l += kept.total();
      m.excluded_fp_l += raw.total() > kept.total() ? raw.total() - kept.total() : 0;
      if (kept.total() > 0) {
        ++m.fp_f;
      } else {
        ++m.tn_f;
        if (raw.total() > 0) ++m.excluded_fp_f;
      }
    }
  }
  m.derive();
  return m;
}

json InfillingScore::to_json() const {
  return {{"mutated", mutated},
          {"mutated_inconsistent", mutated_inconsistent},
          {"clean", clean},
          {"clean_consistent", clean_consistent},
          {"recall", opt(recall)},
          {"specificity", opt(specificity)}};
}

InfillingScore score_infilling(const std::vector<LabeledVerdict>& verdicts) {
  InfillingScore s;
  for (const auto& v : verdicts) {
    if (v.label == SampleLabel::Mutated) {
      ++s.mutated;
      s.mutated_inconsistent += v.consistent ? 0 : 1;
    } else {
      ++s.clean;
      s.clean_consistent += v.consistent ? 1 : 0;
    }
  }
  s.recall = percent(s.mutated_inconsistent, s.mutated);
  s.specificity = percent(s.clean_consistent, s.clean);
  return s;
}

std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsSummary>>& rows) {
  const std::vector<std::string> head = {"", "TP_L", "FP_L", "TP_F", "FP_F", "Rec.", "|",
                                         "FP_L", "E.FP_L", "FP_F", "E.FP_F", "Spe."};
  auto pct = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << *v;
    return os.str();
  };
  std::vector<std::vector<std::string>> cells = {head};
  for (const auto& [name, m] : rows) {
    cells.push_back({name, std::to_string(m.tp_l), std::to_string(m.fp_l_mutated), std::to_string(m.tp_f),
                     std::to_string(m.fp_f_mutated), pct(m.recall_f), "|", std::to_string(m.fp_l),
                     std::to_string(m.excluded_fp_l), std::to_string(m.fp_f), std::to_string(m.excluded_fp_f),
                     pct(m.specificity_l)});
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) line += "  ";
      if (c == 0) {
        line += row[c] + std::string(width[c] - row[c].size(), ' ');
      } else {
        line += std::string(width[c] - row[c].size(), ' ') + row[c];
      }
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << '\n';
  }
  return os.str();
}

}  // namespace tibscan

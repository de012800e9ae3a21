#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tibscan/cascade.hpp"
#include "tibscan/consistency.hpp"
#include "tibscan/gateway.hpp"
#include "tibscan/metrics.hpp"
#include "tibscan/prompt.hpp"
#include "tibscan/source.hpp"
#include "tibscan/synthesizer.hpp"

namespace tibscan {

struct StageRef {
  std::string profile;  // name in RunConfig::profiles
  ConsistencyConfig consistency;
};

struct Budget {
  std::optional<std::size_t> max_api_calls;  // chat calls
  std::optional<double> max_wall_seconds;
};

struct RunConfig {
  Language language = Language::Python;
  std::vector<std::filesystem::path> paths;
  std::vector<std::string> exclude;           // globs against paths relative to their root
  std::vector<std::string> exclude_keywords;  // case-insensitive substrings of the relative path
  bool skip_generated = true;
  ContextStrategy context_strategy = ContextStrategy::Function;
  std::size_t max_context_tokens = 4000;
  bool ast_similarity_gating = false;
  std::vector<BackendProfile> profiles;
  std::vector<StageRef> stages;  // local stages, then the chat stage
  std::string template_id = "1/2FTCa+HL";
  FilterPolicy filter;
  std::size_t highlight_cap = 4;
  std::filesystem::path output_dir = "tibscan-out";
  std::uint64_t seed = 0;
  unsigned workers = 1;
  Budget budget;
  bool record_timing = false;
  std::string commit;
  /// Directory of the config file; output paths are reported relative to it.
  std::filesystem::path base_dir;

  // synthesize
  std::optional<std::size_t> sample_size;
  SelectionPolicy selection = SelectionPolicy::DeterministicFallback;
  std::string embedding_profile;

  const BackendProfile& profile(std::string_view name) const;
  /// Throws InvalidArgument on unknown profiles or stage capabilities that
  /// do not fit their position.
  void validate_stages() const;
};

/// Relative paths (inputs, output_dir, fixtures) resolve against `base_dir`.
RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
ConsistencyConfig parse_consistency_config(const json& j);

/// Source files of the configured language under `paths`, sorted, after the
/// exclusion rules.
std::vector<std::filesystem::path> discover_files(const RunConfig& config);

/// Files whose first lines carry a generator marker.
bool looks_generated(std::string_view text);

struct ScanResult {
  json summary;
  std::size_t reports = 0;
  bool partial = false;
};

/// Runs the cascade over the configured sources and writes tasks.jsonl,
/// verdicts.jsonl, findings.jsonl, reports.jsonl and summary.json into
/// config.output_dir.
ScanResult run_scan(const RunConfig& config);

/// Writes dataset.jsonl and summary.json into config.output_dir.
json run_synthesize(const RunConfig& config);

struct MeasureOptions {
  std::vector<std::filesystem::path> datasets;
  /// Completion profile to score as an infilling stage; otherwise the chat
  /// stage is scored with config.template_id.
  std::optional<std::string> stage;
};

/// Scores a stage or a template on labeled data. Writes metrics.json and
/// outcomes.jsonl into config.output_dir. Throws EmptyInput when the
/// datasets hold no samples.
json run_measure(const RunConfig& config, const MeasureOptions& options);

/// {"stages": [...], "cost": {...}, "n0": 1000, "order": [names]?,
///  "sweep": {"n_range": [2, 5]}?, "monte_carlo": {"n0": 1e6, "seed": 1}?}
json run_simulate_cost(const json& request, unsigned workers = 1);

/// Human-readable triage text for a scan output directory, or an aligned
/// table when given metrics.json files.
std::string render_report(const std::vector<std::filesystem::path>& inputs);

}  // namespace tibscan

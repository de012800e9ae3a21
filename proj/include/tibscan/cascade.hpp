#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace tibscan {

struct StageProfile {
  std::string name;
  double p = 0.0;  // true-negative rate
  double q = 1.0;  // true-positive rate
  double t = 1.0;  // seconds per case
  std::string backend;
  bool chat = false;  // final instruct-model stage

  void validate() const;
};

struct CostParams {
  double c_api = 0.025;          // per case sent to the chat stage
  double c_comp = 2.49 / 3600.0; // per second of local compute
  double c_miss = 500.0;         // per missed bug
  double c_check = 2.0;          // per report inspected
  double epsilon0 = 1e-3;

  void validate() const;
};

/// Density of bugs among the cases a stage lets through:
/// q*eps / (1 - p - eps + (p+q)*eps). Throws DegenerateStage when nothing
/// can pass, except for eps == 0 which yields 0.
double density_after(double epsilon_prev, double p, double q);

struct StageOutcome {
  std::string name;
  double n_in = 0;
  double n_tn = 0;
  double n_tp = 0;
  double n_fp = 0;
  double n_fn = 0;
  double epsilon_after = 0;
  double seconds = 0;
};

struct PipelineOutcome {
  std::vector<StageOutcome> stages;
  double n0 = 0;
  double missed = 0;   // M
  double seconds = 0;  // T
  double cost = 0;     // C
  double cost_api = 0;
  double cost_compute = 0;
  double cost_miss = 0;
  double cost_check = 0;

  double reports() const { return stages.empty() ? 0.0 : stages.back().n_tp + stages.back().n_fp; }
  nlohmann::json to_json() const;
};

/// Expected-value evaluation. The last stage is billed as the chat stage.
PipelineOutcome evaluate_pipeline(const std::vector<StageProfile>& stages, double n0,
                                  const CostParams& params);

/// Per-case Monte-Carlo run of the same cascade. Cases are simulated in
/// fixed-size blocks with per-block RNG streams, so the result depends only
/// on the seed, never on `workers`.
PipelineOutcome simulate_pipeline(const std::vector<StageProfile>& stages, std::uint64_t n0,
                                  const CostParams& params, std::uint64_t seed,
                                  unsigned workers = 1);

struct RankedConfiguration {
  std::vector<std::string> stage_names;
  PipelineOutcome outcome;
};

/// Every ordered selection of distinct non-chat stages followed by one chat
/// stage, for each total stage count in `n_range`, sorted by cost then by
/// name sequence.
std::vector<RankedConfiguration> sweep_configurations(const std::vector<StageProfile>& pool,
                                                      const std::vector<std::size_t>& n_range,
                                                      double n0, const CostParams& params);

StageProfile parse_stage_profile(const nlohmann::json& j);
CostParams parse_cost_params(const nlohmann::json& j);

}  // namespace tibscan

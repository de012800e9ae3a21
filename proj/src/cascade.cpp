#include "tibscan/cascade.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "tibscan/error.hpp"
#include "tibscan/parallel.hpp"
#include "tibscan/rng.hpp"

namespace tibscan {

namespace {

bool unit_interval(double x) { return x >= 0.0 && x <= 1.0; }

}  // namespace

void StageProfile::validate() const {
  if (!unit_interval(p) || !unit_interval(q)) {
    throw Error(ErrorCode::InvalidArgument, "stage " + name + ": p and q must lie in [0, 1]");
  }
  if (!(t > 0.0)) throw Error(ErrorCode::InvalidArgument, "stage " + name + ": t must be positive");
}

void CostParams::validate() const {
  if (c_api < 0 || c_comp < 0 || c_miss < 0 || c_check < 0) {
    throw Error(ErrorCode::InvalidArgument, "costs must be non-negative");
  }
  if (!(epsilon0 >= 0.0 && epsilon0 < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "epsilon0 must lie in [0, 1)");
  }
}

double density_after(double eps, double p, double q) {
  if (!unit_interval(eps) || !unit_interval(p) || !unit_interval(q)) {
    throw Error(ErrorCode::InvalidArgument, "density_after: arguments must lie in [0, 1]");
  }
  // 1 - p - eps + (p+q)eps, grouped so the p = 1 and eps = 0 corners are exact.
  const double denom = (1.0 - p) * (1.0 - eps) + q * eps;
  if (denom <= 0.0) {
    if (eps == 0.0) return 0.0;
    throw Error(ErrorCode::DegenerateStage, "density_after: no case passes the stage");
  }
  return q * eps / denom;
}

nlohmann::json PipelineOutcome::to_json() const {
  nlohmann::json st = nlohmann::json::array();
  for (const auto& s : stages) {
    st.push_back({{"name", s.name},
                  {"n_in", s.n_in},
                  {"n_tn", s.n_tn},
                  {"n_tp", s.n_tp},
                  {"n_fp", s.n_fp},
                  {"n_fn", s.n_fn},
                  {"epsilon_after", s.epsilon_after},
                  {"seconds", s.seconds}});
  }
  return {{"n0", n0},
          {"stages", st},
          {"M", missed},
          {"T", seconds},
          {"C", cost},
          {"cost_api", cost_api},
          {"cost_compute", cost_compute},
          {"cost_miss", cost_miss},
          {"cost_check", cost_check},
          {"reports", reports()}};
}

namespace {

void finish_costs(PipelineOutcome& out, const CostParams& params) {
  out.missed = 0;
  out.seconds = 0;
  for (const auto& s : out.stages) {
    out.missed += s.n_fn;
    out.seconds += s.seconds;
  }
  out.cost_api = params.c_api * out.stages.back().n_in;
  out.cost_compute = params.c_comp * out.seconds;
  out.cost_miss = params.c_miss * out.missed;
  out.cost_check = params.c_check * out.reports();
  out.cost = out.cost_api + out.cost_compute + out.cost_miss + out.cost_check;
}

void check_inputs(const std::vector<StageProfile>& stages, const CostParams& params) {
  if (stages.empty()) throw Error(ErrorCode::InvalidArgument, "pipeline needs at least one stage");
  for (const auto& s : stages) s.validate();
  params.validate();
}

}  // namespace

PipelineOutcome evaluate_pipeline(const std::vector<StageProfile>& stages, double n0,
                                  const CostParams& params) {
  check_inputs(stages, params);
  PipelineOutcome out;
  out.n0 = n0;
  double n = n0;
  double eps = params.epsilon0;
  for (const auto& stage : stages) {
    StageOutcome s;
    s.name = stage.name;
    s.n_in = n;
    s.n_tn = n * stage.p * (1.0 - eps);
    s.n_tp = n * stage.q * eps;
    s.n_fp = n * (1.0 - stage.p) * (1.0 - eps);
    s.n_fn = n * (1.0 - stage.q) * eps;
    s.seconds = n * stage.t;
    const double passed = s.n_tp + s.n_fp;
    s.epsilon_after = passed > 0.0 ? density_after(eps, stage.p, stage.q) : 0.0;
    out.stages.push_back(s);
    n = passed;
    eps = s.epsilon_after;
  }
  finish_costs(out, params);
  return out;
}

PipelineOutcome simulate_pipeline(const std::vector<StageProfile>& stages, std::uint64_t n0,
                                  const CostParams& params, std::uint64_t seed, unsigned workers) {
  check_inputs(stages, params);
  constexpr std::uint64_t kBlock = 1 << 16;
  const std::size_t blocks = static_cast<std::size_t>((n0 + kBlock - 1) / kBlock);
  const std::size_t n_stages = stages.size();
  // tallies[block][stage] = {in, tn, tp, fp, fn}
  std::vector<std::vector<std::array<std::uint64_t, 5>>> tallies(
      blocks, std::vector<std::array<std::uint64_t, 5>>(n_stages, {0, 0, 0, 0, 0}));

  parallel_for(blocks, workers, [&](std::size_t b) {
    Rng rng(derive_seed(seed, b));
    const std::uint64_t begin = b * kBlock;
    const std::uint64_t end = std::min<std::uint64_t>(n0, begin + kBlock);
    auto& tally = tallies[b];
    for (std::uint64_t c = begin; c < end; ++c) {
      const bool positive = rng.bernoulli(params.epsilon0);
      for (std::size_t i = 0; i < n_stages; ++i) {
        auto& t = tally[i];
        ++t[0];
        if (positive) {
          if (rng.bernoulli(stages[i].q)) {
            ++t[2];
          } else {
            ++t[4];
            break;
          }
        } else {
          if (rng.bernoulli(stages[i].p)) {
            ++t[1];
            break;
          }
          ++t[3];
        }
      }
    }
  });

  PipelineOutcome out;
  out.n0 = static_cast<double>(n0);
  for (std::size_t i = 0; i < n_stages; ++i) {
    std::array<std::uint64_t, 5> sum{0, 0, 0, 0, 0};
    for (const auto& tally : tallies) {
      for (int k = 0; k < 5; ++k) sum[k] += tally[i][k];
    }
    StageOutcome s;
    s.name = stages[i].name;
    s.n_in = static_cast<double>(sum[0]);
    s.n_tn = static_cast<double>(sum[1]);
    s.n_tp = static_cast<double>(sum[2]);
    s.n_fp = static_cast<double>(sum[3]);
    s.n_fn = static_cast<double>(sum[4]);
    s.seconds = s.n_in * stages[i].t;
    const double passed = s.n_tp + s.n_fp;
    s.epsilon_after = passed > 0 ? s.n_tp / passed : 0.0;
    out.stages.push_back(s);
  }
  finish_costs(out, params);
  return out;
}

std::vector<RankedConfiguration> sweep_configurations(const std::vector<StageProfile>& pool,
                                                      const std::vector<std::size_t>& n_range,
                                                      double n0, const CostParams& params) {
  if (pool.empty()) throw Error(ErrorCode::InvalidArgument, "sweep needs a non-empty pool");
  std::vector<const StageProfile*> locals;
  std::vector<const StageProfile*> chats;
  for (const auto& s : pool) (s.chat ? chats : locals).push_back(&s);
  if (chats.empty()) throw Error(ErrorCode::InvalidArgument, "sweep pool has no chat stage");

  std::vector<RankedConfiguration> out;
  std::vector<const StageProfile*> chosen;
  std::vector<bool> used(locals.size(), false);
  // Depth-first enumeration of ordered selections without repetition.
  auto extend = [&](auto&& self, std::size_t want) -> void {
    if (chosen.size() == want) {
      for (const StageProfile* chat : chats) {
        std::vector<StageProfile> stages;
        RankedConfiguration rc;
        for (const StageProfile* s : chosen) {
          stages.push_back(*s);
          rc.stage_names.push_back(s->name);
        }
        stages.push_back(*chat);
        rc.stage_names.push_back(chat->name);
        rc.outcome = evaluate_pipeline(stages, n0, params);
        out.push_back(std::move(rc));
      }
      return;
    }
    for (std::size_t i = 0; i < locals.size(); ++i) {
      if (used[i]) continue;
      used[i] = true;
      chosen.push_back(locals[i]);
      self(self, want);
      chosen.pop_back();
      used[i] = false;
    }
  };
  for (std::size_t n : n_range) {
    if (n == 0 || n - 1 > locals.size()) continue;
    extend(extend, n - 1);
  }
  std::stable_sort(out.begin(), out.end(), [](const RankedConfiguration& a, const RankedConfiguration& b) {
    if (a.outcome.cost != b.outcome.cost) return a.outcome.cost < b.outcome.cost;
    return a.stage_names < b.stage_names;
  });
  return out;
}

StageProfile parse_stage_profile(const nlohmann::json& j) {
  StageProfile s;
  s.name = j.at("name").get<std::string>();
  s.p = j.at("p").get<double>();
  s.q = j.at("q").get<double>();
  s.t = j.value("t", s.t);
  s.backend = j.value("backend", "");
  s.chat = j.value("chat", false);
  s.validate();
  return s;
}

CostParams parse_cost_params(const nlohmann::json& j) {
  CostParams c;
  c.c_api = j.value("c_api", c.c_api);
  if (j.contains("c_comp_per_hour")) {
    c.c_comp = j["c_comp_per_hour"].get<double>() / 3600.0;
  } else {
    c.c_comp = j.value("c_comp", c.c_comp);
  }
  c.c_miss = j.value("c_miss", c.c_miss);
  c.c_check = j.value("c_check", c.c_check);
  c.epsilon0 = j.value("epsilon0", c.epsilon0);
  c.validate();
  return c;
}

}  // namespace tibscan

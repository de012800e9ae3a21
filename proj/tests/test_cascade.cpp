#include <doctest.h>

#include <cmath>

#include "tibscan/cascade.hpp"
#include "tibscan/error.hpp"

using namespace tibscan;

namespace {

StageProfile stage(std::string name, double p, double q, double t, bool chat = false) {
  StageProfile s;
  s.name = std::move(name);
  s.p = p;
  s.q = q;
  s.t = t;
  s.chat = chat;
  return s;
}

}  // namespace

TEST_CASE("density_after") {
  CHECK(density_after(0.3, 0.0, 1.0) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(density_after(0.3, 1.0, 1.0) == 1.0);
  CHECK(density_after(0.0, 1.0, 0.7) == 0.0);
  CHECK(density_after(0.0, 0.4, 0.7) == 0.0);
  // Hand evaluation of the recurrence.
  const double eps = 0.01, p = 0.8, q = 0.98;
  CHECK(density_after(eps, p, q) == doctest::Approx(q * eps / (1 - p - eps + (p + q) * eps)));
  CHECK(density_after(1.0, 0.3, 0.5) == 1.0);
  try {
    density_after(0.5, 1.0, 0.0);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateStage);
  }
}

TEST_CASE("evaluate_pipeline counts") {
  CostParams params;
  params.epsilon0 = 0.01;
  std::vector<StageProfile> stages = {stage("a", 0.8, 0.98, 2), stage("b", 0.6, 0.9, 3),
                                      stage("chat", 0.44, 0.84, 5, true)};
  auto out = evaluate_pipeline(stages, 1000, params);
  REQUIRE(out.stages.size() == 3);
  double eps = 0.01;
  double n = 1000;
  double missed = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& s = out.stages[i];
    CHECK(s.n_in == doctest::Approx(n));
    CHECK(s.n_tn + s.n_tp + s.n_fp + s.n_fn == doctest::Approx(s.n_in));
    CHECK(s.n_fn == doctest::Approx(n * (1 - stages[i].q) * eps));
    missed += n * (1 - stages[i].q) * eps;
    eps = density_after(eps, stages[i].p, stages[i].q);
    CHECK(s.epsilon_after == doctest::Approx(eps));
    n = s.n_tp + s.n_fp;
  }
  CHECK(out.missed == doctest::Approx(missed));
  CHECK(out.cost_api == doctest::Approx(0.025 * out.stages[2].n_in));
  CHECK(out.cost_check == doctest::Approx(2.0 * (out.stages[2].n_tp + out.stages[2].n_fp)));
  CHECK(out.cost_compute == doctest::Approx(2.49 / 3600 * out.seconds));
  CHECK(out.cost == doctest::Approx(out.cost_api + out.cost_compute + out.cost_miss + out.cost_check));
  CHECK(out.cost_miss == doctest::Approx(500 * out.missed));
}

TEST_CASE("single perfect-recall stage misses nothing") {
  auto out = evaluate_pipeline({stage("chat", 0.5, 1.0, 1, true)}, 100, CostParams{});
  CHECK(out.missed == 0.0);
}

TEST_CASE("commuting identical-accuracy stages") {
  CostParams params;
  auto ab = evaluate_pipeline({stage("a", 0.8, 0.9, 1), stage("b", 0.7, 0.95, 4), stage("c", 0.4, 0.8, 5, true)},
                              1e4, params);
  auto ba = evaluate_pipeline({stage("b", 0.7, 0.95, 4), stage("a", 0.8, 0.9, 1), stage("c", 0.4, 0.8, 5, true)},
                              1e4, params);
  CHECK(ab.missed == doctest::Approx(ba.missed));
  CHECK(ab.stages.back().epsilon_after == doctest::Approx(ba.stages.back().epsilon_after));
  CHECK(ab.reports() == doctest::Approx(ba.reports()));
}

TEST_CASE("faster stage first is cheaper") {
  std::vector<StageProfile> pool = {stage("fast", 0.8, 0.98, 1), stage("slow", 0.8, 0.98, 10),
                                    stage("chat", 0.44, 0.84, 5, true)};
  auto ranked = sweep_configurations(pool, {3}, 1e5, CostParams{});
  REQUIRE(ranked.size() == 2);
  CHECK(ranked[0].stage_names == std::vector<std::string>{"fast", "slow", "chat"});
  CHECK(ranked[0].outcome.cost < ranked[1].outcome.cost);
}

TEST_CASE("sweep enumeration") {
  std::vector<StageProfile> pool = {stage("l", 0.8, 0.98, 1), stage("chat", 0.44, 0.84, 5, true)};
  CHECK(sweep_configurations(pool, {2}, 1000, CostParams{}).size() == 1);
  std::vector<StageProfile> four = {stage("a", 0.8, 0.98, 1), stage("b", 0.8, 0.98, 1), stage("c", 0.8, 0.98, 1),
                                    stage("chat", 0.44, 0.84, 5, true)};
  // 1 + 3 + 6 + 6 ordered selections for n = 1..4.
  CHECK(sweep_configurations(four, {1, 2, 3, 4}, 1000, CostParams{}).size() == 16);
  auto ranked = sweep_configurations(four, {1, 2, 3, 4}, 1000, CostParams{});
  for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1].outcome.cost <= ranked[i].outcome.cost);
  CHECK_THROWS_AS(sweep_configurations({stage("a", 0.8, 0.9, 1)}, {1}, 10, CostParams{}), Error);
}

TEST_CASE("simulation corner cases and determinism") {
  CostParams zero;
  zero.epsilon0 = 0.0;
  auto none = simulate_pipeline({stage("a", 0.5, 0.9, 1), stage("chat", 0.5, 0.9, 1, true)}, 20000, zero, 1);
  CHECK(none.missed == 0);
  CHECK(none.stages.back().n_tp == 0);

  CostParams params;
  params.epsilon0 = 0.1;
  auto perfect = simulate_pipeline({stage("a", 1, 1, 1), stage("chat", 1, 1, 1, true)}, 50000, params, 2);
  for (const auto& s : perfect.stages) {
    CHECK(s.n_fp == 0);
    CHECK(s.n_fn == 0);
  }

  std::vector<StageProfile> st = {stage("a", 0.8, 0.9, 1), stage("chat", 0.5, 0.9, 1, true)};
  auto one = simulate_pipeline(st, 300000, params, 9, 1);
  auto eight = simulate_pipeline(st, 300000, params, 9, 8);
  CHECK(one.to_json() == eight.to_json());
  auto analytic = evaluate_pipeline(st, 300000, params);
  const double m = analytic.missed;
  CHECK(std::abs(one.missed - m) <= 4 * std::sqrt(m * (1 - m / 300000)));
}

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tibscan/tibscan.h"

namespace fs = std::filesystem;

namespace {

std::string take(tibscan_buffer& b) {
  std::string s(b.data ? b.data : "", b.size);
  tibscan_buffer_free(&b);
  return s;
}

}  // namespace

TEST_CASE("status strings and last error") {
  CHECK(std::string(tibscan_status_string(TIBSCAN_OK)) == "ok");
  CHECK(std::string(tibscan_status_string(TIBSCAN_E_EMPTY_INPUT)) == "empty input");
  CHECK(std::strlen(tibscan_version()) > 0);

  double d = 0;
  CHECK(tibscan_density_after(0.01, 0.5, 1.0, &d) == TIBSCAN_OK);
  CHECK(d == doctest::Approx(0.01 / (0.5 + 0.5 * 0.01)));
  CHECK(std::string(tibscan_last_error()).empty());
  CHECK(tibscan_density_after(0.5, 1.0, 0.0, &d) == TIBSCAN_E_DEGENERATE_STAGE);
  CHECK(std::string(tibscan_last_error()).size() > 0);
  CHECK(tibscan_density_after(0.5, 0.5, 0.5, nullptr) == TIBSCAN_E_INVALID_ARGUMENT);
}

TEST_CASE("token validation through the C API") {
  int valid = -1;
  CHECK(tibscan_validate_token("foo", "VariableUse", "python", nullptr, &valid) == TIBSCAN_OK);
  CHECK(valid == 1);
  CHECK(tibscan_validate_token("(", "VariableUse", "python", "", &valid) == TIBSCAN_OK);
  CHECK(valid == 0);
  CHECK(tibscan_validate_token("x", "Nope", "python", nullptr, &valid) == TIBSCAN_E_INVALID_ARGUMENT);
  CHECK(tibscan_validate_token("x", "VariableUse", "cobol", nullptr, &valid) == TIBSCAN_E_UNSUPPORTED_LANGUAGE);
}

TEST_CASE("unit handle lifecycle") {
  const fs::path src = fs::path(TIBSCAN_TEST_DATA) / "fixtures" / "quote_url.py";
  tibscan_unit* unit = nullptr;
  REQUIRE(tibscan_unit_load(src.c_str(), nullptr, &unit) == TIBSCAN_OK);
  CHECK(tibscan_unit_function_count(unit) >= 1);
  tibscan_buffer b{};
  REQUIRE(tibscan_unit_tasks(unit, "function", 0, &b) == TIBSCAN_OK);
  const std::string tasks = take(b);
  CHECK(tasks.front() == '[');
  CHECK(tasks.find("\"task_id\"") != std::string::npos);
  CHECK(b.data == nullptr);
  CHECK(tibscan_unit_tasks(unit, "diagonal", 0, &b) == TIBSCAN_E_INVALID_ARGUMENT);
  tibscan_unit_free(unit);
  tibscan_unit_free(nullptr);

  CHECK(tibscan_unit_load("/nonexistent/x.py", nullptr, &unit) != TIBSCAN_OK);
  CHECK(unit == nullptr);
}

TEST_CASE("prompt rendering through the C API") {
  tibscan_buffer b{};
  const unsigned hl[] = {2};
  REQUIRE(tibscan_render_prompt("1/2FTCa+HL", 0, "def f():\n    return 1\n", 1, "python", hl, 1, &b) == TIBSCAN_OK);
  const std::string user = take(b);
  CHECK(user.rfind("def f():\n    return 1\n", 0) == 0);
  CHECK(user.find("these lines: 2") != std::string::npos);
  CHECK(tibscan_render_prompt("1", 0, "x = 1\n", 1, "python", hl, 1, &b) == TIBSCAN_E_INVALID_ARGUMENT);
  CHECK(tibscan_render_prompt("nope", 0, "x = 1\n", 1, "python", nullptr, 0, &b) == TIBSCAN_E_INVALID_ARGUMENT);
}

TEST_CASE("run entry points") {
  const fs::path dir = fs::temp_directory_path() / "tibscan-capi-test";
  fs::remove_all(dir);
  fs::create_directories(dir / "src");
  std::ofstream(dir / "src" / "m.py") << "def add(a, b):\n    return a + b\n";
  std::ofstream(dir / "local.json") << R"({"default": "echo"})";
  std::ofstream(dir / "chat.json") << R"({"rules": []})";
  const char* cfg = R"({
    "language": "python", "paths": ["src"], "output_dir": "out",
    "profiles": [
      {"name": "l", "kind": "scripted", "fixture": "local.json", "capabilities": {"completion_logprobs": true}},
      {"name": "c", "kind": "scripted", "fixture": "chat.json", "capabilities": {"chat_json": true}}],
    "stages": ["l", "c"]})";
  tibscan_config* config = nullptr;
  REQUIRE(tibscan_config_from_json(cfg, dir.c_str(), &config) == TIBSCAN_OK);
  CHECK(tibscan_config_set_workers(config, 0) == TIBSCAN_E_INVALID_ARGUMENT);
  CHECK(tibscan_config_set_workers(config, 2) == TIBSCAN_OK);
  CHECK(tibscan_config_set_template(config, "nope") == TIBSCAN_E_INVALID_ARGUMENT);

  tibscan_buffer b{};
  REQUIRE(tibscan_scan(config, &b) == TIBSCAN_OK);
  CHECK(take(b).find("\"reports\": 0") != std::string::npos);
  CHECK(fs::exists(dir / "out" / "summary.json"));

  std::ofstream(dir / "empty.jsonl") << "";
  const std::string empty = (dir / "empty.jsonl").string();
  const char* datasets[] = {empty.c_str()};
  CHECK(tibscan_measure(config, datasets, 1, nullptr, &b) == TIBSCAN_E_EMPTY_INPUT);

  const std::string out = (dir / "out").string();
  const char* inputs[] = {out.c_str()};
  REQUIRE(tibscan_report(inputs, 1, &b) == TIBSCAN_OK);
  CHECK(take(b).find("No reports.") != std::string::npos);
  CHECK(tibscan_report(nullptr, 0, &b) == TIBSCAN_E_EMPTY_INPUT);

  REQUIRE(tibscan_simulate_cost(R"({"stages": [{"name": "a", "p": 0.8, "q": 0.98, "t": 5},
      {"name": "g", "p": 0.44, "q": 0.84, "t": 10, "chat": true}], "n0": 1000})", 1, &b) == TIBSCAN_OK);
  CHECK(take(b).find("\"analytic\"") != std::string::npos);
  CHECK(tibscan_simulate_cost("{not json", 1, &b) == TIBSCAN_E_INVALID_ARGUMENT);

  tibscan_config_free(config);
  CHECK(tibscan_config_load((dir / "missing.json").c_str(), &config) == TIBSCAN_E_IO);
  fs::remove_all(dir);
}

TEST_CASE("log handler receives messages") {
  static std::vector<std::string> seen;
  tibscan_set_log_level(TIBSCAN_LOG_INFO);
  tibscan_set_log_handler([](tibscan_log_level, const char* m, void*) { seen.emplace_back(m); }, nullptr);
  // A missing input path is logged and skipped.
  const char* cfg = R"({"language": "python", "paths": ["/nonexistent-tibscan-input"], "output_dir": "/tmp/tibscan-capi-log"})";
  tibscan_config* config = nullptr;
  REQUIRE(tibscan_config_from_json(cfg, nullptr, &config) == TIBSCAN_OK);
  tibscan_buffer b{};
  CHECK(tibscan_synthesize(config, &b) == TIBSCAN_OK);
  tibscan_buffer_free(&b);
  tibscan_config_free(config);
  fs::remove_all("/tmp/tibscan-capi-log");
  tibscan_set_log_handler(nullptr, nullptr);
  tibscan_set_log_level(TIBSCAN_LOG_WARN);
  CHECK_FALSE(seen.empty());
}

// tibscan-cli: command-line front end over the C API.
//
// Exit codes: 0 success, 1 failure, 2 bad usage or config, 3 empty input,
// 4 scan stopped by a budget cap (partial results were written).

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tibscan/tibscan.h"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitEmpty = 3;
constexpr int kExitPartial = 4;

int exit_code(tibscan_status s) {
  switch (s) {
    case TIBSCAN_OK: return 0;
    case TIBSCAN_E_INVALID_ARGUMENT:
    case TIBSCAN_E_UNSUPPORTED_LANGUAGE:
    case TIBSCAN_E_MISSING_PLACEHOLDER: return kExitUsage;
    case TIBSCAN_E_EMPTY_INPUT: return kExitEmpty;
    default: return kExitFailure;
  }
}

int report_failure(tibscan_status s) {
  std::cerr << "tibscan: " << tibscan_status_string(s);
  const std::string detail = tibscan_last_error();
  if (!detail.empty()) std::cerr << ": " << detail;
  std::cerr << "\n";
  return exit_code(s);
}

/// Owns a buffer filled by the library.
struct Buffer {
  tibscan_buffer b{nullptr, 0};
  ~Buffer() { tibscan_buffer_free(&b); }
  std::string_view view() const { return {b.data ? b.data : "", b.size}; }
};

struct ConfigHandle {
  tibscan_config* c = nullptr;
  ~ConfigHandle() { tibscan_config_free(c); }
};

struct RunOptions {
  std::string config;
  std::optional<unsigned> workers;
  std::optional<unsigned long long> seed;
  std::string output;
  std::string template_id;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("-c,--config", o.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("-j,--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "Override the configured seed");
  cmd->add_option("-o,--output", o.output, "Override the output directory");
  cmd->add_option("-t,--template", o.template_id, "Override the prompt template");
}

tibscan_status open_config(const RunOptions& o, ConfigHandle& h) {
  tibscan_status s = tibscan_config_load(o.config.c_str(), &h.c);
  if (s == TIBSCAN_OK && o.workers) s = tibscan_config_set_workers(h.c, *o.workers);
  if (s == TIBSCAN_OK && o.seed) s = tibscan_config_set_seed(h.c, *o.seed);
  if (s == TIBSCAN_OK && !o.output.empty()) s = tibscan_config_set_output_dir(h.c, o.output.c_str());
  if (s == TIBSCAN_OK && !o.template_id.empty()) s = tibscan_config_set_template(h.c, o.template_id.c_str());
  return s;
}

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

void log_to_stderr(tibscan_log_level level, const char* message, void*) {
  static const char* names[] = {"debug", "info", "warn", "error", ""};
  std::fprintf(stderr, "[%s] %s\n", names[level], message);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-inconsistency bug scanner"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(tibscan_version()));
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "debug, info, warn, error or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  RunOptions scan_opts, synth_opts, measure_opts;
  auto* scan = app.add_subcommand("scan", "Run the detection cascade over the configured sources");
  add_run_options(scan, scan_opts);

  auto* synth = app.add_subcommand("synthesize", "Build a clean/mutated dataset from the configured sources");
  add_run_options(synth, synth_opts);

  auto* measure = app.add_subcommand("measure", "Score a stage or a prompt template on labeled datasets");
  add_run_options(measure, measure_opts);
  std::vector<std::string> datasets;
  std::string stage;
  measure->add_option("-d,--dataset", datasets, "Dataset JSONL files")->required()->check(CLI::ExistingFile);
  measure->add_option("-s,--stage", stage, "Completion profile to score; default scores the chat template");

  auto* sim = app.add_subcommand("simulate-cost", "Evaluate cascade cost models");
  std::string request;
  unsigned sim_workers = 1;
  sim->add_option("request", request, "Request JSON file")->required()->check(CLI::ExistingFile);
  sim->add_option("-j,--workers", sim_workers, "Worker threads for Monte-Carlo runs")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Render scan reports or metric tables");
  std::vector<std::string> inputs;
  report->add_option("inputs", inputs, "Scan output directories or metrics.json files")
      ->required()
      ->check(CLI::ExistingPath);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  const std::vector<std::string> levels = {"debug", "info", "warn", "error", "off"};
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] == log_level) tibscan_set_log_level(static_cast<tibscan_log_level>(i));
  }
  tibscan_set_log_handler(log_to_stderr, nullptr);

  Buffer out;
  tibscan_status s = TIBSCAN_OK;
  bool partial = false;

  if (*scan) {
    ConfigHandle h;
    s = open_config(scan_opts, h);
    if (s == TIBSCAN_OK) s = tibscan_scan(h.c, &out.b);
    partial = s == TIBSCAN_OK && out.view().find("\"partial\": true") != std::string_view::npos;
  } else if (*synth) {
    ConfigHandle h;
    s = open_config(synth_opts, h);
    if (s == TIBSCAN_OK) s = tibscan_synthesize(h.c, &out.b);
  } else if (*measure) {
    ConfigHandle h;
    s = open_config(measure_opts, h);
    const auto ds = c_strings(datasets);
    if (s == TIBSCAN_OK) {
      s = tibscan_measure(h.c, ds.data(), ds.size(), stage.empty() ? nullptr : stage.c_str(), &out.b);
    }
  } else if (*sim) {
    std::ifstream in(request);
    std::stringstream text;
    text << in.rdbuf();
    s = tibscan_simulate_cost(text.str().c_str(), sim_workers, &out.b);
  } else if (*report) {
    const auto in = c_strings(inputs);
    s = tibscan_report(in.data(), in.size(), &out.b);
  }

  if (s != TIBSCAN_OK) return report_failure(s);
  std::cout << out.view();
  if (!out.view().empty() && out.view().back() != '\n') std::cout << '\n';
  if (partial) {
    std::cerr << "tibscan: budget cap reached; results are partial\n";
    return kExitPartial;
  }
  return 0;
}

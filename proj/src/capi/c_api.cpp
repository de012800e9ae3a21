#include "tibscan/tibscan.h"

#include <cstdlib>
#include <cstring>
#include <mutex>
#include <string>

#include "tibscan/cascade.hpp"
#include "tibscan/consistency.hpp"
#include "tibscan/error.hpp"
#include "tibscan/log.hpp"
#include "tibscan/pipeline.hpp"
#include "tibscan/prompt.hpp"
#include "tibscan/source.hpp"

using namespace tibscan;

struct tibscan_config {
  RunConfig config;
};

struct tibscan_unit {
  SourceUnitPtr unit;
};

namespace {

thread_local std::string g_last_error;

tibscan_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return TIBSCAN_E_INVALID_ARGUMENT;
    case ErrorCode::UnsupportedLanguage: return TIBSCAN_E_UNSUPPORTED_LANGUAGE;
    case ErrorCode::UnreadableFile: return TIBSCAN_E_UNREADABLE_FILE;
    case ErrorCode::WholeFileParseFailure: return TIBSCAN_E_PARSE_FAILURE;
    case ErrorCode::NoCandidates: return TIBSCAN_E_NO_CANDIDATES;
    case ErrorCode::InsufficientCandidates: return TIBSCAN_E_INSUFFICIENT_CANDIDATES;
    case ErrorCode::ContextTooLong: return TIBSCAN_E_CONTEXT_TOO_LONG;
    case ErrorCode::BackendUnavailable: return TIBSCAN_E_BACKEND_UNAVAILABLE;
    case ErrorCode::BackendExhausted: return TIBSCAN_E_BACKEND_EXHAUSTED;
    case ErrorCode::SchemaViolation: return TIBSCAN_E_SCHEMA_VIOLATION;
    case ErrorCode::RateLimited: return TIBSCAN_E_RATE_LIMITED;
    case ErrorCode::DegenerateStage: return TIBSCAN_E_DEGENERATE_STAGE;
    case ErrorCode::MissingPlaceholder: return TIBSCAN_E_MISSING_PLACEHOLDER;
    case ErrorCode::Io: return TIBSCAN_E_IO;
    case ErrorCode::EmptyInput: return TIBSCAN_E_EMPTY_INPUT;
    case ErrorCode::BudgetExceeded: return TIBSCAN_E_BUDGET_EXCEEDED;
  }
  return TIBSCAN_E_INTERNAL;
}

tibscan_status fail(tibscan_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

// Runs fn, translating exceptions into status codes.
template <typename Fn>
tibscan_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return TIBSCAN_OK;
  } catch (const Error& e) {
    return fail(to_status(e.code()), e.what());
  } catch (const json::exception& e) {
    return fail(TIBSCAN_E_INVALID_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(TIBSCAN_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(TIBSCAN_E_INTERNAL, e.what());
  }
}

void fill(tibscan_buffer* out, const std::string& s) {
  out->data = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out->data) throw std::bad_alloc();
  std::memcpy(out->data, s.data(), s.size());
  out->data[s.size()] = '\0';
  out->size = s.size();
}

void need(const void* p, const char* what) {
  if (!p) throw Error(ErrorCode::InvalidArgument, std::string(what) + " is NULL");
}

std::vector<std::filesystem::path> paths_of(const char* const* items, size_t n) {
  if (n) need(items, "path list");
  std::vector<std::filesystem::path> out;
  for (size_t i = 0; i < n; ++i) {
    need(items[i], "path");
    out.emplace_back(items[i]);
  }
  return out;
}

Language language_named(const char* name) {
  const auto lang = parse_language(name);
  if (!lang) throw Error(ErrorCode::UnsupportedLanguage, std::string("unsupported language '") + name + "'");
  return *lang;
}

}  // namespace

extern "C" {

const char* tibscan_version(void) { return TIBSCAN_VERSION; }

const char* tibscan_status_string(tibscan_status status) {
  switch (status) {
    case TIBSCAN_OK: return "ok";
    case TIBSCAN_E_INVALID_ARGUMENT: return "invalid argument";
    case TIBSCAN_E_UNSUPPORTED_LANGUAGE: return "unsupported language";
    case TIBSCAN_E_UNREADABLE_FILE: return "unreadable file";
    case TIBSCAN_E_PARSE_FAILURE: return "parse failure";
    case TIBSCAN_E_NO_CANDIDATES: return "no candidates";
    case TIBSCAN_E_INSUFFICIENT_CANDIDATES: return "insufficient candidates";
    case TIBSCAN_E_CONTEXT_TOO_LONG: return "context too long";
    case TIBSCAN_E_BACKEND_UNAVAILABLE: return "backend unavailable";
    case TIBSCAN_E_BACKEND_EXHAUSTED: return "backend exhausted";
    case TIBSCAN_E_SCHEMA_VIOLATION: return "schema violation";
    case TIBSCAN_E_RATE_LIMITED: return "rate limited";
    case TIBSCAN_E_DEGENERATE_STAGE: return "degenerate stage";
    case TIBSCAN_E_MISSING_PLACEHOLDER: return "missing placeholder";
    case TIBSCAN_E_IO: return "i/o error";
    case TIBSCAN_E_EMPTY_INPUT: return "empty input";
    case TIBSCAN_E_BUDGET_EXCEEDED: return "budget exceeded";
    case TIBSCAN_E_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* tibscan_last_error(void) { return g_last_error.c_str(); }

void tibscan_set_log_handler(tibscan_log_fn fn, void* user) {
  if (!fn) {
    log::set_sink({});
    return;
  }
  log::set_sink([fn, user](log::Level level, std::string_view message) {
    const std::string copy(message);
    fn(static_cast<tibscan_log_level>(level), copy.c_str(), user);
  });
}

void tibscan_set_log_level(tibscan_log_level level) {
  if (level < TIBSCAN_LOG_DEBUG || level > TIBSCAN_LOG_OFF) return;
  log::set_level(static_cast<log::Level>(level));
}

void tibscan_buffer_free(tibscan_buffer* buffer) {
  if (!buffer) return;
  std::free(buffer->data);
  buffer->data = nullptr;
  buffer->size = 0;
}

tibscan_status tibscan_config_load(const char* path, tibscan_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto c = std::make_unique<tibscan_config>();
    c->config = load_run_config(path);
    *out = c.release();
  });
}

tibscan_status tibscan_config_from_json(const char* json_text, const char* base_dir, tibscan_config** out) {
  return guarded([&] {
    need(json_text, "json_text");
    need(out, "out");
    *out = nullptr;
    auto c = std::make_unique<tibscan_config>();
    c->config = parse_run_config(json::parse(json_text), base_dir ? base_dir : "");
    *out = c.release();
  });
}

tibscan_status tibscan_config_set_workers(tibscan_config* config, unsigned workers) {
  return guarded([&] {
    need(config, "config");
    if (workers == 0) throw Error(ErrorCode::InvalidArgument, "workers must be positive");
    config->config.workers = workers;
  });
}

tibscan_status tibscan_config_set_seed(tibscan_config* config, unsigned long long seed) {
  return guarded([&] {
    need(config, "config");
    config->config.seed = seed;
  });
}

tibscan_status tibscan_config_set_output_dir(tibscan_config* config, const char* dir) {
  return guarded([&] {
    need(config, "config");
    need(dir, "dir");
    config->config.output_dir = dir;
  });
}

tibscan_status tibscan_config_set_template(tibscan_config* config, const char* template_id) {
  return guarded([&] {
    need(config, "config");
    need(template_id, "template_id");
    find_template(template_id);
    config->config.template_id = template_id;
  });
}

void tibscan_config_free(tibscan_config* config) { delete config; }

tibscan_status tibscan_scan(const tibscan_config* config, tibscan_buffer* out) {
  return guarded([&] {
    need(config, "config");
    need(out, "out");
    fill(out, run_scan(config->config).summary.dump(2));
  });
}

tibscan_status tibscan_synthesize(const tibscan_config* config, tibscan_buffer* out) {
  return guarded([&] {
    need(config, "config");
    need(out, "out");
    fill(out, run_synthesize(config->config).dump(2));
  });
}

tibscan_status tibscan_measure(const tibscan_config* config, const char* const* datasets, size_t n_datasets,
                               const char* stage, tibscan_buffer* out) {
  return guarded([&] {
    need(config, "config");
    need(out, "out");
    MeasureOptions opts;
    opts.datasets = paths_of(datasets, n_datasets);
    if (stage) opts.stage = stage;
    fill(out, run_measure(config->config, opts).dump(2));
  });
}

tibscan_status tibscan_simulate_cost(const char* request_json, unsigned workers, tibscan_buffer* out) {
  return guarded([&] {
    need(request_json, "request_json");
    need(out, "out");
    fill(out, run_simulate_cost(json::parse(request_json), workers ? workers : 1).dump(2));
  });
}

tibscan_status tibscan_report(const char* const* inputs, size_t n_inputs, tibscan_buffer* out) {
  return guarded([&] {
    need(out, "out");
    const auto paths = paths_of(inputs, n_inputs);
    if (paths.empty()) throw Error(ErrorCode::EmptyInput, "no report inputs");
    fill(out, render_report(paths));
  });
}

tibscan_status tibscan_unit_load(const char* path, const char* language, tibscan_unit** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    std::optional<Language> lang;
    if (language) lang = language_named(language);
    auto u = std::make_unique<tibscan_unit>();
    u->unit = load_unit(path, lang);
    *out = u.release();
  });
}

size_t tibscan_unit_function_count(const tibscan_unit* unit) { return unit ? unit->unit->functions.size() : 0; }

tibscan_status tibscan_unit_tasks(const tibscan_unit* unit, const char* strategy, size_t max_context_tokens,
                                  tibscan_buffer* out) {
  return guarded([&] {
    need(unit, "unit");
    need(out, "out");
    ContextStrategy s = ContextStrategy::Function;
    if (strategy) {
      const auto parsed = parse_context_strategy(strategy);
      if (!parsed) throw Error(ErrorCode::InvalidArgument, std::string("unknown strategy '") + strategy + "'");
      s = *parsed;
    }
    TaskLimits limits;
    if (max_context_tokens) limits.max_context_tokens = max_context_tokens;
    const auto tasks = enumerate_tasks(unit->unit, s, limits);
    json arr = json::array();
    for (const auto& t : tasks.tasks) {
      arr.push_back({{"task_id", t.task_id},
                     {"function", t.function().name},
                     {"line_no", t.line_no},
                     {"kind", std::string(to_string(t.kind))},
                     {"original", t.original},
                     {"mask", {t.mask.begin, t.mask.end}}});
    }
    fill(out, arr.dump());
  });
}

void tibscan_unit_free(tibscan_unit* unit) { delete unit; }

tibscan_status tibscan_validate_token(const char* token, const char* kind, const char* language,
                                      const char* preceding, int* valid) {
  return guarded([&] {
    need(token, "token");
    need(kind, "kind");
    need(language, "language");
    need(valid, "valid");
    const auto k = parse_token_kind(kind);
    if (!k) throw Error(ErrorCode::InvalidArgument, std::string("unknown token kind '") + kind + "'");
    *valid = validate_token(token, *k, language_named(language), preceding ? preceding : "") ? 1 : 0;
  });
}

tibscan_status tibscan_density_after(double epsilon, double p, double q, double* out) {
  return guarded([&] {
    need(out, "out");
    *out = density_after(epsilon, p, q);
  });
}

tibscan_status tibscan_render_prompt(const char* template_id, size_t round, const char* code, unsigned first_line,
                                     const char* language, const unsigned* highlights, size_t n_highlights,
                                     tibscan_buffer* out) {
  return guarded([&] {
    need(template_id, "template_id");
    need(code, "code");
    need(language, "language");
    need(out, "out");
    const PromptTemplate& tmpl = find_template(template_id);
    Snippet snippet{code, first_line ? first_line : 1, language_named(language)};
    HighlightSet hl;
    if (n_highlights) need(highlights, "highlights");
    for (size_t i = 0; i < n_highlights; ++i) hl.add(highlights[i]);
    fill(out, render_round(tmpl, round, snippet, n_highlights ? &hl : nullptr).user);
  });
}

}  // extern "C"

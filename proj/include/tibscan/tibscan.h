#ifndef TIBSCAN_H
#define TIBSCAN_H

#include <stddef.h>

#if defined(_WIN32)
#  ifdef TIBSCAN_BUILDING
#    define TIBSCAN_API __declspec(dllexport)
#  else
#    define TIBSCAN_API __declspec(dllimport)
#  endif
#else
#  define TIBSCAN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tibscan_status {
  TIBSCAN_OK = 0,
  TIBSCAN_E_INVALID_ARGUMENT = 1,
  TIBSCAN_E_UNSUPPORTED_LANGUAGE = 2,
  TIBSCAN_E_UNREADABLE_FILE = 3,
  TIBSCAN_E_PARSE_FAILURE = 4,
  TIBSCAN_E_NO_CANDIDATES = 5,
  TIBSCAN_E_INSUFFICIENT_CANDIDATES = 6,
  TIBSCAN_E_CONTEXT_TOO_LONG = 7,
  TIBSCAN_E_BACKEND_UNAVAILABLE = 8,
  TIBSCAN_E_BACKEND_EXHAUSTED = 9,
  TIBSCAN_E_SCHEMA_VIOLATION = 10,
  TIBSCAN_E_RATE_LIMITED = 11,
  TIBSCAN_E_DEGENERATE_STAGE = 12,
  TIBSCAN_E_MISSING_PLACEHOLDER = 13,
  TIBSCAN_E_IO = 14,
  TIBSCAN_E_EMPTY_INPUT = 15,
  TIBSCAN_E_BUDGET_EXCEEDED = 16,
  TIBSCAN_E_INTERNAL = 99
} tibscan_status;

typedef enum tibscan_log_level {
  TIBSCAN_LOG_DEBUG = 0,
  TIBSCAN_LOG_INFO = 1,
  TIBSCAN_LOG_WARN = 2,
  TIBSCAN_LOG_ERROR = 3,
  TIBSCAN_LOG_OFF = 4
} tibscan_log_level;

/* Bytes owned by the library. Release with tibscan_buffer_free. data is
   NUL-terminated; size excludes the terminator. */
typedef struct tibscan_buffer {
  char* data;
  size_t size;
} tibscan_buffer;

typedef struct tibscan_config tibscan_config;
typedef struct tibscan_unit tibscan_unit;

typedef void (*tibscan_log_fn)(tibscan_log_level level, const char* message, void* user);

TIBSCAN_API const char* tibscan_version(void);
TIBSCAN_API const char* tibscan_status_string(tibscan_status status);
/* Message of the last failed call on this thread, "" if none. */
TIBSCAN_API const char* tibscan_last_error(void);

/* NULL restores logging to stderr. */
TIBSCAN_API void tibscan_set_log_handler(tibscan_log_fn fn, void* user);
TIBSCAN_API void tibscan_set_log_level(tibscan_log_level level);

TIBSCAN_API void tibscan_buffer_free(tibscan_buffer* buffer);

/* Run configuration. Relative paths resolve against the config file's
   directory, or base_dir for tibscan_config_from_json. */
TIBSCAN_API tibscan_status tibscan_config_load(const char* path, tibscan_config** out);
TIBSCAN_API tibscan_status tibscan_config_from_json(const char* json_text, const char* base_dir,
                                                    tibscan_config** out);
TIBSCAN_API tibscan_status tibscan_config_set_workers(tibscan_config* config, unsigned workers);
TIBSCAN_API tibscan_status tibscan_config_set_seed(tibscan_config* config, unsigned long long seed);
TIBSCAN_API tibscan_status tibscan_config_set_output_dir(tibscan_config* config, const char* dir);
TIBSCAN_API tibscan_status tibscan_config_set_template(tibscan_config* config, const char* template_id);
TIBSCAN_API void tibscan_config_free(tibscan_config* config);

/* Each writes its artifacts to the configured output directory and returns
   the run summary as JSON in *out. */
TIBSCAN_API tibscan_status tibscan_scan(const tibscan_config* config, tibscan_buffer* out);
TIBSCAN_API tibscan_status tibscan_synthesize(const tibscan_config* config, tibscan_buffer* out);
/* stage may be NULL to score the chat stage with the configured template. */
TIBSCAN_API tibscan_status tibscan_measure(const tibscan_config* config, const char* const* datasets,
                                           size_t n_datasets, const char* stage, tibscan_buffer* out);

TIBSCAN_API tibscan_status tibscan_simulate_cost(const char* request_json, unsigned workers,
                                                 tibscan_buffer* out);
/* Triage text for scan directories, a table for metrics.json files. */
TIBSCAN_API tibscan_status tibscan_report(const char* const* inputs, size_t n_inputs, tibscan_buffer* out);

/* Single source files. language may be NULL to infer it from the extension. */
TIBSCAN_API tibscan_status tibscan_unit_load(const char* path, const char* language, tibscan_unit** out);
TIBSCAN_API size_t tibscan_unit_function_count(const tibscan_unit* unit);
/* JSON array of infilling tasks; strategy is "function", "file" or "sliced_file". */
TIBSCAN_API tibscan_status tibscan_unit_tasks(const tibscan_unit* unit, const char* strategy,
                                              size_t max_context_tokens, tibscan_buffer* out);
TIBSCAN_API void tibscan_unit_free(tibscan_unit* unit);

/* *valid is 1 when preceding + token can begin a code token of kind. */
TIBSCAN_API tibscan_status tibscan_validate_token(const char* token, const char* kind, const char* language,
                                                  const char* preceding, int* valid);
TIBSCAN_API tibscan_status tibscan_density_after(double epsilon, double p, double q, double* out);

/* User prompt of one template round. highlights may be NULL. */
TIBSCAN_API tibscan_status tibscan_render_prompt(const char* template_id, size_t round, const char* code,
                                                 unsigned first_line, const char* language,
                                                 const unsigned* highlights, size_t n_highlights,
                                                 tibscan_buffer* out);

#ifdef __cplusplus
}
#endif

#endif

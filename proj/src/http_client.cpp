#include "http_client.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "tibscan/error.hpp"
#include "tibscan/log.hpp"
#include "tibscan/text.hpp"

namespace tibscan::detail {

namespace {

double parse_retry_after(const httplib::Result& res, double fallback) {
  if (!res || !res->has_header("Retry-After")) return fallback;
  try {
    return std::stod(res->get_header_value("Retry-After"));
  } catch (const std::exception&) {
    return fallback;
  }
}

void sleep_seconds(double seconds) {
  if (seconds > 0) std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

bool mentions_context_length(const std::string& body) {
  const std::string lower = text::to_lower(body);
  return lower.find("context") != std::string::npos &&
         (lower.find("length") != std::string::npos || lower.find("too long") != std::string::npos);
}

}  // namespace

json post_json(const BackendProfile& profile, const std::string& path, const json& body,
               bool surface_rate_limit) {
  httplib::Client client(profile.base_url);
  const auto timeout = std::chrono::duration<double>(profile.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  httplib::Headers headers;
  if (!profile.api_key_env_var.empty()) {
    if (const char* key = std::getenv(profile.api_key_env_var.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    } else {
      log::warn(profile.name, ": environment variable ", profile.api_key_env_var, " is not set");
    }
  }
  const std::string payload = body.dump();
  std::string last_problem;
  for (unsigned attempt = 0;; ++attempt) {
    auto res = client.Post(path, headers, payload, "application/json");
    const double backoff = profile.backoff_seconds * static_cast<double>(1u << std::min(attempt, 10u));
    if (!res) {
      last_problem = httplib::to_string(res.error());
    } else if (res->status == 429) {
      const double wait = parse_retry_after(res, backoff);
      if (surface_rate_limit) {
        throw RateLimitedError(profile.name + ": rate limited", wait);
      }
      last_problem = "rate limited";
      if (attempt < profile.max_retries) {
        log::info(profile.name, ": rate limited, waiting ", wait, "s");
        sleep_seconds(wait);
        continue;
      }
    } else if (res->status >= 500) {
      last_problem = "HTTP " + std::to_string(res->status);
    } else if (res->status >= 400) {
      if (mentions_context_length(res->body)) {
        throw Error(ErrorCode::ContextTooLong, profile.name + ": " + res->body);
      }
      throw Error(ErrorCode::BackendUnavailable,
                  profile.name + ": HTTP " + std::to_string(res->status) + ": " + res->body);
    } else {
      try {
        return json::parse(res->body);
      } catch (const json::exception& e) {
        last_problem = std::string("malformed reply: ") + e.what();
      }
    }
    if (attempt >= profile.max_retries) break;
    log::info(profile.name, ": ", last_problem, ", retry ", attempt + 1, " in ", backoff, "s");
    sleep_seconds(backoff);
  }
  throw Error(ErrorCode::BackendUnavailable, profile.name + ": " + last_problem);
}

}  // namespace tibscan::detail

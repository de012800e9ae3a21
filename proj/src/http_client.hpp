#pragma once

#include <string>

#include "tibscan/gateway.hpp"

namespace tibscan::detail {

/// POSTs `body` to profile.base_url + path and returns the parsed reply.
/// Connection failures and 5xx replies are retried with exponential backoff
/// up to profile.max_retries, then BackendUnavailable is thrown. A 429 is
/// either waited out (when `surface_rate_limit` is false) or raised as
/// RateLimitedError. Over-long prompts map to ContextTooLong.
json post_json(const BackendProfile& profile, const std::string& path, const json& body,
               bool surface_rate_limit);

}  // namespace tibscan::detail

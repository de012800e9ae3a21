#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace tibscan::text {

bool is_valid_utf8(std::string_view s) noexcept;

/// Maps byte offsets to 1-based line numbers and back.
class LineIndex {
 public:
  explicit LineIndex(std::string_view text);

  std::uint32_t line_of(std::size_t offset) const noexcept;
  std::size_t line_start(std::uint32_t line) const noexcept;
  /// Offset one past the line's last character, excluding the newline.
  std::size_t line_end(std::uint32_t line) const noexcept;
  std::uint32_t line_count() const noexcept { return static_cast<std::uint32_t>(starts_.size()); }

 private:
  std::vector<std::size_t> starts_;
  std::size_t size_;
};

std::vector<std::string_view> split_lines(std::string_view text);

/// Trims and collapses whitespace runs to a single space.
std::string normalize_whitespace(std::string_view s);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

std::size_t levenshtein(std::string_view a, std::string_view b);

/// Stable 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;
std::string hex64(std::uint64_t value);

/// Glob match over '/'-separated paths: '*' stays within a segment, '**'
/// crosses segments, '?' matches one character.
bool glob_match(std::string_view pattern, std::string_view path) noexcept;

/// Rough text-token estimate used when no backend tokenizer is available:
/// one token per four bytes, rounded up.
std::size_t approx_token_count(std::string_view s) noexcept;

}  // namespace tibscan::text

#include "tibscan/lexicon.hpp"

#include <array>
#include <cctype>

namespace tibscan::lexicon {
namespace {

using F = OperatorFamily;

constexpr std::array<OperatorEntry, 36> kPython{{
    {"<", F::Comparison},   {">", F::Comparison},    {"<=", F::Comparison},
    {">=", F::Comparison},  {"==", F::Comparison},   {"!=", F::Comparison},
    {"is", F::Comparison},  {"in", F::Comparison},   {"+", F::Arithmetic},
    {"-", F::Arithmetic},   {"*", F::Arithmetic},    {"/", F::Arithmetic},
    {"//", F::Arithmetic},  {"%", F::Arithmetic},    {"**", F::Arithmetic},
    {"@", F::Arithmetic},   {"<<", F::Bitwise},      {">>", F::Bitwise},
    {"&", F::Bitwise},      {"|", F::Bitwise},       {"^", F::Bitwise},
    {"and", F::Boolean},    {"or", F::Boolean},      {"+=", F::Augmented},
    {"-=", F::Augmented},   {"*=", F::Augmented},    {"/=", F::Augmented},
    {"//=", F::Augmented},  {"%=", F::Augmented},    {"**=", F::Augmented},
    {"@=", F::Augmented},   {"<<=", F::Augmented},   {">>=", F::Augmented},
    {"&=", F::Augmented},   {"|=", F::Augmented},    {"^=", F::Augmented},
}};

constexpr std::array<OperatorEntry, 28> kC{{
    {"<", F::Comparison},  {">", F::Comparison},  {"<=", F::Comparison}, {">=", F::Comparison},
    {"==", F::Comparison}, {"!=", F::Comparison}, {"+", F::Arithmetic},  {"-", F::Arithmetic},
    {"*", F::Arithmetic},  {"/", F::Arithmetic},  {"%", F::Arithmetic},  {"<<", F::Bitwise},
    {">>", F::Bitwise},    {"&", F::Bitwise},     {"|", F::Bitwise},     {"^", F::Bitwise},
    {"&&", F::Boolean},    {"||", F::Boolean},    {"+=", F::Augmented},  {"-=", F::Augmented},
    {"*=", F::Augmented},  {"/=", F::Augmented},  {"%=", F::Augmented},  {"<<=", F::Augmented},
    {">>=", F::Augmented}, {"&=", F::Augmented},  {"|=", F::Augmented},  {"^=", F::Augmented},
}};

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_hex(char c) { return std::isxdigit(static_cast<unsigned char>(c)) != 0; }

// Prefix automaton for numeric literals. Accepts any prefix of a well-formed
// literal: decimal/hex/octal/binary integers, floats with exponents, Python
// underscores and imaginary suffix, C integer and float suffixes.
bool numeric_prefix(std::string_view s, Language language) {
  const bool py = language == Language::Python;
  std::size_t i = 0;
  if (s.empty()) return false;
  auto lower = [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); };
  auto sep_ok = [&](std::size_t at) {
    // Python digit separator: single underscore between digits.
    return py && at > 0 && s[at - 1] != '_' && s[at - 1] != '.';
  };

  if (s[0] == '0' && s.size() >= 2 && (lower(s[1]) == 'x' || lower(s[1]) == 'b' ||
                                       (py && lower(s[1]) == 'o'))) {
    const char radix = lower(s[1]);
    i = 2;
    for (; i < s.size(); ++i) {
      const char c = s[i];
      const bool ok = radix == 'x' ? is_hex(c) : radix == 'b' ? (c == '0' || c == '1') : (c >= '0' && c <= '7');
      if (ok) continue;
      if (c == '_' && sep_ok(i)) continue;
      break;
    }
    if (!py) {
      // Integer suffixes: u, l, ll in any order.
      for (; i < s.size(); ++i) {
        const char c = lower(s[i]);
        if (c != 'u' && c != 'l') return false;
      }
    }
    return i == s.size();
  }

  bool seen_digit = false;
  bool seen_dot = false;
  bool seen_exp = false;
  for (; i < s.size(); ++i) {
    const char c = s[i];
    if (is_digit(c)) {
      seen_digit = true;
      continue;
    }
    if (c == '_' && sep_ok(i) && seen_digit) continue;
    if (c == '.' && !seen_dot && !seen_exp) {
      seen_dot = true;
      continue;
    }
    if ((c == 'e' || c == 'E') && seen_digit && !seen_exp) {
      seen_exp = true;
      if (i + 1 < s.size() && (s[i + 1] == '+' || s[i + 1] == '-')) ++i;
      continue;
    }
    break;
  }
  if (i == 0) return false;
  if (!seen_digit && !(seen_dot && i == 1)) return false;
  if (i == s.size()) return true;
  // Suffixes.
  const std::string_view rest = s.substr(i);
  if (py) return rest == "j" || rest == "J";
  for (char c : rest) {
    const char l = lower(c);
    if (l != 'u' && l != 'l' && l != 'f') return false;
  }
  return rest.size() <= 3;
}

bool string_prefix(std::string_view s, Language language) {
  std::size_t i = 0;
  const bool py = language == Language::Python;
  // Prefix letters.
  while (i < s.size() && i < 2 && std::isalpha(static_cast<unsigned char>(s[i]))) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(s[i])));
    const bool ok = py ? (c == 'r' || c == 'b' || c == 'u' || c == 'f') : (c == 'l' || c == 'u');
    if (!ok) return false;
    ++i;
  }
  if (!py && i < s.size() && s.substr(0, i) == "u" && s[i] == '8') ++i;
  if (i == s.size()) return i > 0;  // bare prefix letters can still open a string
  const char quote = s[i];
  if (quote != '"' && quote != '\'') return false;
  ++i;
  bool triple = false;
  if (py && s.size() >= i + 2 && s[i] == quote && s[i + 1] == quote) {
    triple = true;
    i += 2;
  }
  // Body: anything until the closing quote; nothing may follow it.
  bool escaped = false;
  std::size_t run = 0;
  for (; i < s.size(); ++i) {
    const char c = s[i];
    if (escaped) {
      escaped = false;
      run = 0;
      continue;
    }
    if (c == '\\') {
      escaped = true;
      run = 0;
      continue;
    }
    if (!triple && c == '\n') return false;
    if (c == quote) {
      ++run;
      if (!triple || run == 3) return i + 1 == s.size();
      continue;
    }
    run = 0;
  }
  return true;
}

}  // namespace

std::span<const OperatorEntry> operators(Language language) noexcept {
  if (language == Language::Python) return kPython;
  return kC;
}

const OperatorEntry* find_operator(Language language, std::string_view text) noexcept {
  for (const auto& entry : operators(language)) {
    if (entry.text == text) return &entry;
  }
  return nullptr;
}

std::vector<std::string_view> operator_substitutes(Language language, std::string_view text) {
  std::vector<std::string_view> out;
  const OperatorEntry* self = find_operator(language, text);
  if (!self) return out;
  for (const auto& entry : operators(language)) {
    if (entry.family != self->family || entry.text == text) continue;
    if (entry.text == "is" || entry.text == "in") continue;
    out.push_back(entry.text);
  }
  return out;
}

bool is_identifier_start(char c, Language language) noexcept {
  const auto u = static_cast<unsigned char>(c);
  if (std::isalpha(u) || c == '_') return true;
  return language == Language::Python && u >= 0x80;
}

bool is_identifier_char(char c, Language language) noexcept {
  return is_identifier_start(c, language) || is_digit(c);
}

bool is_identifier_prefix(std::string_view accumulated, Language language) noexcept {
  if (accumulated.empty() || !is_identifier_start(accumulated.front(), language)) return false;
  for (char c : accumulated) {
    if (!is_identifier_char(c, language)) return false;
  }
  return true;
}

bool is_operator_prefix(std::string_view accumulated, Language language) noexcept {
  if (accumulated.empty()) return false;
  for (const auto& entry : operators(language)) {
    if (entry.text.substr(0, accumulated.size()) == accumulated) return true;
  }
  return false;
}

bool is_literal_prefix(std::string_view accumulated, Language language) noexcept {
  if (accumulated.empty()) return false;
  return numeric_prefix(accumulated, language) || string_prefix(accumulated, language);
}

}  // namespace tibscan::lexicon

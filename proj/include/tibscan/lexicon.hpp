#pragma once

#include <span>
#include <string_view>

#include "tibscan/source.hpp"

namespace tibscan::lexicon {

enum class OperatorFamily { Comparison, Arithmetic, Bitwise, Boolean, Augmented };

struct OperatorEntry {
  std::string_view text;
  OperatorFamily family;
};

/// Binary comparison, arithmetic, bitwise, boolean and augmented-assignment
/// operators eligible for masking. Unary operators and punctuation are absent.
std::span<const OperatorEntry> operators(Language language) noexcept;

const OperatorEntry* find_operator(Language language, std::string_view text) noexcept;

/// Operators that may replace `text` in a mutation: same family, different
/// spelling, in table order. `is`/`in` are never substitutes.
std::vector<std::string_view> operator_substitutes(Language language, std::string_view text);

bool is_identifier_start(char c, Language language) noexcept;
bool is_identifier_char(char c, Language language) noexcept;

/// `accumulated` could begin an identifier of the language.
bool is_identifier_prefix(std::string_view accumulated, Language language) noexcept;

/// `accumulated` is a prefix of some masked operator of the language.
bool is_operator_prefix(std::string_view accumulated, Language language) noexcept;

/// `accumulated` is a prefix of a numeric or string literal lexeme.
bool is_literal_prefix(std::string_view accumulated, Language language) noexcept;

}  // namespace tibscan::lexicon

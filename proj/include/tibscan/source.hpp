#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tibscan {

enum class Language { Python, C };

std::string_view to_string(Language language) noexcept;
/// Accepts "python"/"py" and "c" (case-insensitive).
std::optional<Language> parse_language(std::string_view name) noexcept;
/// Extension-based detection: .py -> Python, .c/.h -> C.
std::optional<Language> language_for_path(const std::filesystem::path& path) noexcept;

enum class CodeTokenKind { VariableUse, FunctionCall, Operator, Literal };

std::string_view to_string(CodeTokenKind kind) noexcept;
std::optional<CodeTokenKind> parse_token_kind(std::string_view name) noexcept;

enum class ContextStrategy { Function, File, SlicedFile };

std::string_view to_string(ContextStrategy strategy) noexcept;
std::optional<ContextStrategy> parse_context_strategy(std::string_view name) noexcept;

struct ByteRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive

  std::size_t size() const noexcept { return end - begin; }
  bool contains(const ByteRange& other) const noexcept {
    return begin <= other.begin && other.end <= end;
  }
  friend bool operator==(const ByteRange&, const ByteRange&) = default;
};

struct LineRange {
  std::uint32_t first = 0;  // 1-based, inclusive
  std::uint32_t last = 0;
  friend bool operator==(const LineRange&, const LineRange&) = default;
};

struct FunctionSpan {
  std::string name;
  ByteRange byte_range;
  LineRange line_range;
  std::optional<std::size_t> token_count;
};

/// A parsed file. Immutable after parse_unit; share it through
/// std::shared_ptr<const SourceUnit>.
struct SourceUnit {
  std::string path;
  Language language = Language::Python;
  std::string text;
  /// Outermost function definitions in file order; never overlapping.
  std::vector<FunctionSpan> functions;
  /// Functions dropped because their subtree contained parse errors.
  std::vector<std::string> skipped_functions;

  /// The function text starting at the beginning of its first line, so that
  /// indentation of methods and nested definitions is preserved.
  std::string_view snippet(const FunctionSpan& fn) const noexcept;
  std::size_t snippet_begin(const FunctionSpan& fn) const noexcept;
};

using SourceUnitPtr = std::shared_ptr<const SourceUnit>;

/// Throws Error{UnsupportedLanguage | UnreadableFile | WholeFileParseFailure}.
SourceUnitPtr parse_unit(std::string path, Language language, std::string text);

/// Reads the file and parses it with the language inferred from its extension
/// unless one is given.
SourceUnitPtr load_unit(const std::filesystem::path& path,
                        std::optional<Language> language = std::nullopt);

struct InfillingTask {
  std::string task_id;
  SourceUnitPtr unit;
  std::size_t function_index = 0;
  ByteRange mask;  // offsets into unit->text
  std::string original;
  CodeTokenKind kind = CodeTokenKind::VariableUse;
  ContextStrategy context = ContextStrategy::Function;
  std::string prefix;
  std::string suffix;
  std::uint32_t line_no = 0;

  const FunctionSpan& function() const { return unit->functions.at(function_index); }
  std::string context_text() const { return prefix + original + suffix; }
};

using TokenCounter = std::function<std::size_t(std::string_view)>;

struct TaskLimits {
  std::size_t max_context_tokens = 4000;
  /// C only: mask tokens only inside functions with a structurally
  /// near-duplicate sibling in the same file.
  bool ast_similarity_gating = false;
  double similarity_threshold = 0.8;
  /// Defaults to text::approx_token_count.
  TokenCounter token_counter;
};

struct TaskEnumeration {
  std::vector<InfillingTask> tasks;
  std::size_t dropped_too_long = 0;
  std::size_t gated_out = 0;
};

/// Maskable leaf token inside a function, before any context is attached.
struct CodeToken {
  ByteRange range;
  CodeTokenKind kind = CodeTokenKind::VariableUse;
  std::string text;
  /// Grammar node type of the leaf ("identifier", "integer", "string", ...).
  std::string node_type;
};

/// All maskable token uses inside one function, in byte order.
std::vector<CodeToken> maskable_tokens(const SourceUnit& unit, std::size_t function_index);

/// Binding and use occurrences of names, plus literals, inside a function.
/// Used as substitution material by the synthesizer.
struct ScopeToken {
  std::string text;
  CodeTokenKind kind = CodeTokenKind::VariableUse;
  std::string node_type;
  bool same_function = true;
};
std::vector<ScopeToken> scope_tokens(const SourceUnit& unit, std::size_t function_index);

TaskEnumeration enumerate_tasks(const SourceUnitPtr& unit, ContextStrategy strategy,
                                const TaskLimits& limits = {});

struct SliceExtension {
  std::string prefix;  // file-level declarations preceding the function
  std::string suffix;  // file-level declarations following it
};

/// File-level globals, imports/includes, macros and other functions'
/// signatures around `function_index`, in original order.
SliceExtension slice_file_context(const SourceUnit& unit, std::size_t function_index);

std::string make_task_id(std::string_view path, const ByteRange& range, std::string_view original);

/// Structural similarity (multiset Jaccard over subtree shape hashes) between
/// two functions of the same unit; identifiers and literal text are ignored.
double structural_similarity(const SourceUnit& unit, std::size_t a, std::size_t b);

/// True when the text parses without error in the function that would contain
/// `range` after replacing it with `replacement`, and the replacement is a
/// single leaf of `kind` there.
bool substitution_parses(const SourceUnit& unit, const ByteRange& range,
                         std::string_view replacement, CodeTokenKind kind);

}  // namespace tibscan

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tibscan/gateway.hpp"
#include "tibscan/source.hpp"

namespace tibscan {

struct RoundSpec {
  std::string text;              // user prompt with {placeholders}
  PropertySchema schema;
  std::string highlight_clause;  // appended on its own line when highlights exist
};

struct PromptTemplate {
  std::string id;
  std::vector<RoundSpec> rounds;

  bool supports_highlights() const;
};

/// Parses the template text format:
///   @id <template id>
///   @round <property> ...      (starts a round; text lines follow)
///   @highlight <clause>        (optional, once per round)
PromptTemplate parse_template(std::string_view source);

/// Built-in templates: 1, 1FT, 1/2FT, 1/2FT/3P, 1/2FT/3Ca, 1/2FTCa, 1/2FTCa+HL.
const PromptTemplate& find_template(std::string_view id);
std::vector<std::string> template_ids();

/// Display name of a language inside prompts ("Python", "C").
std::string_view language_display_name(Language language);

std::string system_prompt(Language language);

/// Replaces {name} placeholders in one pass; substituted text is never
/// rescanned. Throws MissingPlaceholder for names absent from `values`.
std::string substitute(std::string_view text, const std::map<std::string, std::string>& values);

/// Absolute file line numbers, kept sorted and unique.
struct HighlightSet {
  std::vector<std::uint32_t> lines;

  void add(std::uint32_t line);
  bool empty() const noexcept { return lines.empty(); }
  std::string joined() const;
};

struct Snippet {
  std::string text;
  std::uint32_t first_line = 1;  // file line of the snippet's first line
  Language language = Language::Python;

  std::uint32_t last_line() const;
};

struct RenderedRound {
  std::string system;
  std::string user;
  PropertySchema schema;
};

/// Throws InvalidArgument for highlights on a template without a highlight
/// clause or for lines outside the snippet.
RenderedRound render_round(const PromptTemplate& tmpl, std::size_t round_index, const Snippet& snippet,
                           const HighlightSet* highlights = nullptr);

struct BugFinding {
  std::string code_line;
  std::string explanation;
  std::optional<std::string> fixed_line;
  std::optional<bool> token_level;
  std::optional<std::string> category;  // canonical name, see canonical_category
  std::optional<std::string> priority;  // High, Medium or Low when recognised
  std::optional<std::uint32_t> resolved_line_no;
  /// Best token-overlap line when code_line matched no line exactly.
  std::optional<std::uint32_t> approximate_line_no;

  json to_json() const;
  static BugFinding from_json(const json& j);
};

/// "Logic Bug" -> "LogicBug", "not a bug" -> "NotABug"; unrecognised names
/// become "Others(<name>)".
std::string canonical_category(std::string_view raw);
std::string canonical_priority(std::string_view raw);

/// Sets resolved_line_no on a unique whitespace-normalized equal line, else on
/// a unique line containing code_line; otherwise records the best overlap
/// line as approximate_line_no only.
void resolve_line(BugFinding& finding, const Snippet& snippet);

struct ExchangeResult {
  std::vector<BugFinding> findings;
  std::size_t rounds_used = 0;
  ChatExchange exchange;
};

/// Runs every round in order. Later-round fields are merged into the
/// findings of earlier rounds by normalized code_line; only findings present
/// in the last executed round survive. An empty first round ends the exchange.
ExchangeResult run_exchange(const PromptTemplate& tmpl, const Snippet& snippet,
                            const HighlightSet* highlights, ChatBackend& backend);

struct FilterPolicy {
  bool drop_non_token_level = true;
  bool drop_other_categories = true;
  bool drop_below_high_priority = false;
};

FilterPolicy parse_filter_policy(const json& j);

/// Findings without the inspected property are kept.
std::vector<BugFinding> filter_findings(const std::vector<BugFinding>& findings,
                                        const FilterPolicy& policy = {});

}  // namespace tibscan

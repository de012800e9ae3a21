#include "tibscan/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "embedded_templates.hpp"
#include "tibscan/error.hpp"
#include "tibscan/log.hpp"
#include "tibscan/text.hpp"

namespace tibscan {

bool PromptTemplate::supports_highlights() const {
  return std::any_of(rounds.begin(), rounds.end(),
                     [](const RoundSpec& r) { return !r.highlight_clause.empty(); });
}

namespace {

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string_view embedded(std::string_view name) {
  for (std::size_t i = 0; i < detail::kEmbeddedFileCount; ++i) {
    if (detail::kEmbeddedFiles[i].name == name) return detail::kEmbeddedFiles[i].content;
  }
  throw Error(ErrorCode::InvalidArgument, "missing embedded template file " + std::string(name));
}

std::string strip_trailing_newlines(std::string_view s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.remove_suffix(1);
  return std::string(s);
}

}  // namespace

PromptTemplate parse_template(std::string_view source) {
  PromptTemplate t;
  RoundSpec* current = nullptr;
  std::vector<std::string> body;
  auto flush = [&] {
    if (current) {
      std::string text;
      for (std::size_t i = 0; i < body.size(); ++i) {
        if (i) text.push_back('\n');
        text += body[i];
      }
      current->text = strip_trailing_newlines(text);
    }
    body.clear();
  };
  for (std::string_view line : text::split_lines(source)) {
    if (line.starts_with("@id ")) {
      t.id = text::trim(line.substr(4));
    } else if (line.starts_with("@round")) {
      flush();
      RoundSpec round;
      for (const auto& w : words(line.substr(6))) {
        if (w == "code_line" || w == "explanation") continue;
        round.schema.selective.push_back(w);
      }
      t.rounds.push_back(std::move(round));
      current = &t.rounds.back();
    } else if (line.starts_with("@highlight ")) {
      if (!current) throw Error(ErrorCode::InvalidArgument, "@highlight outside a round");
      current->highlight_clause = std::string(line.substr(11));
    } else {
      if (!current) {
        if (!text::trim(line).empty()) {
          throw Error(ErrorCode::InvalidArgument, "template text before the first @round");
        }
        continue;
      }
      body.emplace_back(line);
    }
  }
  flush();
  if (t.id.empty() || t.rounds.empty()) {
    throw Error(ErrorCode::InvalidArgument, "template needs @id and at least one @round");
  }
  return t;
}

namespace {

struct Registry {
  std::vector<PromptTemplate> templates;
  std::string system;

  Registry() {
    system = strip_trailing_newlines(embedded("system.txt"));
    for (std::size_t i = 0; i < detail::kEmbeddedFileCount; ++i) {
      if (detail::kEmbeddedFiles[i].name.ends_with(".tmpl")) {
        templates.push_back(parse_template(detail::kEmbeddedFiles[i].content));
      }
    }
    // Report order; unknown ids sort last by name.
    static const std::vector<std::string_view> order = {"1",         "1FT",     "1/2FT",     "1/2FT/3P",
                                                        "1/2FT/3Ca", "1/2FTCa", "1/2FTCa+HL"};
    auto rank = [](const std::string& id) {
      auto it = std::find(order.begin(), order.end(), id);
      return static_cast<std::size_t>(it - order.begin());
    };
    std::sort(templates.begin(), templates.end(), [&](const PromptTemplate& a, const PromptTemplate& b) {
      if (rank(a.id) != rank(b.id)) return rank(a.id) < rank(b.id);
      return a.id < b.id;
    });
  }
};

const Registry& registry() {
  static const Registry r;
  return r;
}

}  // namespace

const PromptTemplate& find_template(std::string_view id) {
  for (const auto& t : registry().templates) {
    if (t.id == id) return t;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown template '" + std::string(id) + "'");
}

std::vector<std::string> template_ids() {
  std::vector<std::string> ids;
  for (const auto& t : registry().templates) ids.push_back(t.id);
  return ids;
}

std::string_view language_display_name(Language language) {
  return language == Language::Python ? "Python" : "C";
}

std::string system_prompt(Language language) {
  return substitute(registry().system, {{"language", std::string(language_display_name(language))}});
}

std::string substitute(std::string_view text, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      std::size_t j = i + 1;
      while (j < text.size() && (std::islower(static_cast<unsigned char>(text[j])) || text[j] == '_')) ++j;
      if (j < text.size() && text[j] == '}' && j > i + 1) {
        const std::string name(text.substr(i + 1, j - i - 1));
        auto it = values.find(name);
        if (it == values.end()) {
          throw Error(ErrorCode::MissingPlaceholder, "no value for placeholder {" + name + "}");
        }
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out.push_back(text[i++]);
  }
  return out;
}

void HighlightSet::add(std::uint32_t line) {
  auto it = std::lower_bound(lines.begin(), lines.end(), line);
  if (it == lines.end() || *it != line) lines.insert(it, line);
}

std::string HighlightSet::joined() const {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(lines[i]);
  }
  return out;
}

std::uint32_t Snippet::last_line() const {
  const auto n = static_cast<std::uint32_t>(text::split_lines(text).size());
  return first_line + (n ? n - 1 : 0);
}

RenderedRound render_round(const PromptTemplate& tmpl, std::size_t round_index, const Snippet& snippet,
                           const HighlightSet* highlights) {
  if (round_index >= tmpl.rounds.size()) {
    throw Error(ErrorCode::InvalidArgument, "template " + tmpl.id + " has no round " +
                                                std::to_string(round_index + 1));
  }
  const bool highlighted = highlights && !highlights->empty();
  if (highlighted) {
    if (!tmpl.supports_highlights()) {
      throw Error(ErrorCode::InvalidArgument, "template " + tmpl.id + " takes no highlights");
    }
    for (auto line : highlights->lines) {
      if (line < snippet.first_line || line > snippet.last_line()) {
        throw Error(ErrorCode::InvalidArgument,
                    "highlight line " + std::to_string(line) + " is outside the snippet");
      }
    }
  }
  const RoundSpec& round = tmpl.rounds[round_index];
  std::map<std::string, std::string> values = {
      {"code", strip_trailing_newlines(snippet.text)},
      {"language", std::string(language_display_name(snippet.language))},
  };
  RenderedRound r;
  r.system = system_prompt(snippet.language);
  r.user = substitute(round.text, values);
  if (highlighted && !round.highlight_clause.empty()) {
    values["suspicious_lines"] = highlights->joined();
    r.user += "\n";
    r.user += substitute(round.highlight_clause, values);
  }
  r.schema = round.schema;
  return r;
}

// ---------------------------------------------------------------------------
// findings

json BugFinding::to_json() const {
  json j = {{"code_line", code_line}, {"explanation", explanation}};
  if (fixed_line) j["fixed_line"] = *fixed_line;
  if (token_level) j["token_level"] = *token_level;
  if (category) j["category"] = *category;
  if (priority) j["priority"] = *priority;
  if (resolved_line_no) j["resolved_line_no"] = *resolved_line_no;
  if (approximate_line_no) j["approximate_line_no"] = *approximate_line_no;
  return j;
}

BugFinding BugFinding::from_json(const json& j) {
  BugFinding f;
  f.code_line = j.at("code_line").get<std::string>();
  f.explanation = j.at("explanation").get<std::string>();
  if (j.contains("fixed_line")) f.fixed_line = j["fixed_line"].get<std::string>();
  if (j.contains("token_level")) f.token_level = j["token_level"].get<bool>();
  if (j.contains("category")) f.category = canonical_category(j["category"].get<std::string>());
  if (j.contains("priority")) f.priority = canonical_priority(j["priority"].get<std::string>());
  if (j.contains("resolved_line_no")) f.resolved_line_no = j["resolved_line_no"].get<std::uint32_t>();
  if (j.contains("approximate_line_no")) f.approximate_line_no = j["approximate_line_no"].get<std::uint32_t>();
  return f;
}

namespace {

std::string squash(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace

std::string canonical_category(std::string_view raw) {
  static const std::vector<std::pair<std::string, std::string>> known = {
      {"securityvulnerability", "SecurityVulnerability"},
      {"logicbug", "LogicBug"},
      {"enhancement", "Enhancement"},
      {"unexpectedbehavior", "UnexpectedBehavior"},
      {"unexpectedbehaviour", "UnexpectedBehavior"},
      {"symbolnotdefined", "SymbolNotDefined"},
      {"modulenotimported", "ModuleNotImported"},
      {"badsmell", "BadSmell"},
      {"notabug", "NotABug"},
      {"others", "Others"},
  };
  const std::string key = squash(raw);
  for (const auto& [k, v] : known) {
    if (key == k) return v;
  }
  std::string name = text::trim(raw);
  if (key.starts_with("others") && key.size() > 6) {
    // "Others: Race Condition", "Others (Race Condition)"
    name = name.substr(6);
    const auto b = name.find_first_not_of(" :(-");
    const auto e = name.find_last_not_of(" )");
    name = b == std::string::npos ? std::string{} : name.substr(b, e - b + 1);
  }
  return "Others(" + name + ")";
}

std::string canonical_priority(std::string_view raw) {
  const std::string key = squash(raw);
  if (key == "high") return "High";
  if (key == "medium") return "Medium";
  if (key == "low") return "Low";
  return text::trim(raw);
}

namespace {

std::set<std::string> lexemes(std::string_view s) {
  std::set<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (std::isalnum(c) || c == '_') {
      std::size_t j = i;
      while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
      out.emplace(s.substr(i, j - i));
      i = j;
    } else {
      out.emplace(s.substr(i, 1));
      ++i;
    }
  }
  return out;
}

}  // namespace

void resolve_line(BugFinding& finding, const Snippet& snippet) {
  finding.resolved_line_no.reset();
  finding.approximate_line_no.reset();
  const std::string needle = text::normalize_whitespace(finding.code_line);
  if (needle.empty()) return;
  const auto lines = text::split_lines(snippet.text);
  std::vector<std::uint32_t> equal;
  std::vector<std::uint32_t> containing;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string norm = text::normalize_whitespace(lines[i]);
    const auto line_no = snippet.first_line + static_cast<std::uint32_t>(i);
    if (norm == needle) equal.push_back(line_no);
    if (norm.find(needle) != std::string::npos) containing.push_back(line_no);
  }
  if (equal.size() == 1) {
    finding.resolved_line_no = equal.front();
    return;
  }
  if (equal.empty() && containing.size() == 1) {
    finding.resolved_line_no = containing.front();
    return;
  }
  if (!equal.empty() || containing.size() > 1) return;  // ambiguous

  const auto want = lexemes(needle);
  double best = 0.0;
  std::optional<std::uint32_t> best_line;
  bool tie = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto have = lexemes(lines[i]);
    std::size_t inter = 0;
    for (const auto& w : want) inter += have.count(w);
    const std::size_t uni = want.size() + have.size() - inter;
    const double score = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
    if (score > best) {
      best = score;
      best_line = snippet.first_line + static_cast<std::uint32_t>(i);
      tie = false;
    } else if (score == best && score > 0.0) {
      tie = true;
    }
  }
  if (best_line && !tie) finding.approximate_line_no = best_line;
}

ExchangeResult run_exchange(const PromptTemplate& tmpl, const Snippet& snippet,
                            const HighlightSet* highlights, ChatBackend& backend) {
  ExchangeResult result;
  result.exchange.system = system_prompt(snippet.language);
  result.exchange.model_id = backend.profile().name;
  std::vector<json> merged;
  for (std::size_t r = 0; r < tmpl.rounds.size(); ++r) {
    const RenderedRound rendered = render_round(tmpl, r, snippet, highlights);
    const json& response = chat_round(result.exchange, backend, rendered.user, rendered.schema);
    ++result.rounds_used;
    std::vector<json> next;
    for (const auto& bug : response["bugs"]) {
      json combined = json::object();
      const std::string key = text::normalize_whitespace(bug["code_line"].get<std::string>());
      for (const auto& prior : merged) {
        if (text::normalize_whitespace(prior["code_line"].get<std::string>()) == key) {
          combined = prior;
          break;
        }
      }
      for (const auto& [k, v] : bug.items()) combined[k] = v;
      next.push_back(std::move(combined));
    }
    merged = std::move(next);
    if (merged.empty()) break;
  }
  for (const auto& j : merged) {
    BugFinding f = BugFinding::from_json(j);
    resolve_line(f, snippet);
    result.findings.push_back(std::move(f));
  }
  return result;
}

FilterPolicy parse_filter_policy(const json& j) {
  FilterPolicy p;
  p.drop_non_token_level = j.value("drop_non_token_level", p.drop_non_token_level);
  p.drop_other_categories = j.value("drop_other_categories", p.drop_other_categories);
  p.drop_below_high_priority = j.value("drop_below_high_priority", p.drop_below_high_priority);
  return p;
}

std::vector<BugFinding> filter_findings(const std::vector<BugFinding>& findings, const FilterPolicy& policy) {
  if (policy.drop_below_high_priority) {
    log::warn("priority filtering is enabled; it discards real bugs rated below High");
  }
  std::vector<BugFinding> out;
  for (const auto& f : findings) {
    if (policy.drop_non_token_level && f.token_level && !*f.token_level) continue;
    if (policy.drop_other_categories && f.category && *f.category != "LogicBug" &&
        *f.category != "SecurityVulnerability" && *f.category != "BadSmell") {
      continue;
    }
    if (policy.drop_below_high_priority && f.priority && *f.priority != "High") continue;
    out.push_back(f);
  }
  return out;
}

}  // namespace tibscan

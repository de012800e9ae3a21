#include "tibscan/source.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "syntax_tree.hpp"
#include "tibscan/error.hpp"
#include "tibscan/lexicon.hpp"
#include "tibscan/log.hpp"
#include "tibscan/text.hpp"

extern "C" const TSLanguage* tree_sitter_python();
extern "C" const TSLanguage* tree_sitter_c();

namespace tibscan {

// ---------------------------------------------------------------------------
// enum spellings

std::string_view to_string(Language language) noexcept {
  return language == Language::Python ? "python" : "c";
}

std::optional<Language> parse_language(std::string_view name) noexcept {
  const std::string lower = text::to_lower(name);
  if (lower == "python" || lower == "py") return Language::Python;
  if (lower == "c") return Language::C;
  return std::nullopt;
}

std::optional<Language> language_for_path(const std::filesystem::path& path) noexcept {
  const std::string ext = text::to_lower(path.extension().string());
  if (ext == ".py") return Language::Python;
  if (ext == ".c" || ext == ".h") return Language::C;
  return std::nullopt;
}

std::string_view to_string(CodeTokenKind kind) noexcept {
  switch (kind) {
    case CodeTokenKind::VariableUse: return "VariableUse";
    case CodeTokenKind::FunctionCall: return "FunctionCall";
    case CodeTokenKind::Operator: return "Operator";
    case CodeTokenKind::Literal: return "Literal";
  }
  return "";
}

std::optional<CodeTokenKind> parse_token_kind(std::string_view name) noexcept {
  for (auto kind : {CodeTokenKind::VariableUse, CodeTokenKind::FunctionCall,
                    CodeTokenKind::Operator, CodeTokenKind::Literal}) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

std::string_view to_string(ContextStrategy strategy) noexcept {
  switch (strategy) {
    case ContextStrategy::Function: return "Function";
    case ContextStrategy::File: return "File";
    case ContextStrategy::SlicedFile: return "SlicedFile";
  }
  return "";
}

std::optional<ContextStrategy> parse_context_strategy(std::string_view name) noexcept {
  const std::string lower = text::to_lower(name);
  if (lower == "function") return ContextStrategy::Function;
  if (lower == "file") return ContextStrategy::File;
  if (lower == "slicedfile" || lower == "sliced_file" || lower == "sliced-file") {
    return ContextStrategy::SlicedFile;
  }
  return std::nullopt;
}

std::size_t SourceUnit::snippet_begin(const FunctionSpan& fn) const noexcept {
  std::size_t begin = fn.byte_range.begin;
  while (begin > 0 && text[begin - 1] != '\n') --begin;
  return begin;
}

std::string_view SourceUnit::snippet(const FunctionSpan& fn) const noexcept {
  const std::size_t begin = snippet_begin(fn);
  return std::string_view(text).substr(begin, fn.byte_range.end - begin);
}

// ---------------------------------------------------------------------------
// tree plumbing

namespace detail {

namespace {

struct ParserDeleter {
  void operator()(TSParser* parser) const noexcept { ts_parser_delete(parser); }
};

TSParser* thread_parser(Language language) {
  thread_local std::unique_ptr<TSParser, ParserDeleter> python_parser;
  thread_local std::unique_ptr<TSParser, ParserDeleter> c_parser;
  auto& slot = language == Language::Python ? python_parser : c_parser;
  if (!slot) {
    slot.reset(ts_parser_new());
    const TSLanguage* grammar = language == Language::Python ? tree_sitter_python() : tree_sitter_c();
    if (!ts_parser_set_language(slot.get(), grammar)) {
      slot.reset();
      throw Error(ErrorCode::UnsupportedLanguage, "grammar ABI mismatch");
    }
  }
  return slot.get();
}

}  // namespace

SyntaxTree::SyntaxTree(Language language, std::string_view text)
    : text_(text), language_(language) {
  TSParser* parser = thread_parser(language);
  tree_.reset(ts_parser_parse_string(parser, nullptr, text.data(), static_cast<uint32_t>(text.size())));
}

std::vector<TSNode> outermost_functions(const SyntaxTree& tree) {
  std::vector<TSNode> out;
  walk(tree.root(), [&](const std::vector<Frame>& stack) {
    const TSNode node = stack.back().node;
    const std::string_view type = node_type(node);
    if (type == "function_definition") {
      out.push_back(node);
      return false;
    }
    if (type == "decorated_definition") {
      const TSNode def = ts_node_child_by_field_name(node, "definition", 10);
      if (!ts_node_is_null(def) && node_type(def) == "function_definition") {
        out.push_back(node);
        return false;
      }
    }
    return true;
  });
  return out;
}

}  // namespace detail

namespace {

using detail::Frame;
using detail::node_range;
using detail::node_type;
using detail::SyntaxTree;

TSNode function_node(TSNode span_node) {
  if (node_type(span_node) == "decorated_definition") {
    return ts_node_child_by_field_name(span_node, "definition", 10);
  }
  return span_node;
}

std::string function_name(const SyntaxTree& tree, TSNode span_node) {
  TSNode fn = function_node(span_node);
  if (tree.language() == Language::Python) {
    const TSNode name = ts_node_child_by_field_name(fn, "name", 4);
    return ts_node_is_null(name) ? "<anonymous>" : std::string(tree.node_text(name));
  }
  TSNode decl = ts_node_child_by_field_name(fn, "declarator", 10);
  while (!ts_node_is_null(decl) && node_type(decl) != "identifier") {
    TSNode next = ts_node_child_by_field_name(decl, "declarator", 10);
    if (ts_node_is_null(next)) {
      // parenthesized_declarator keeps its inner declarator unnamed
      next = ts_node_named_child_count(decl) > 0 ? ts_node_named_child(decl, 0) : next;
    }
    decl = next;
  }
  return ts_node_is_null(decl) ? "<anonymous>" : std::string(tree.node_text(decl));
}

TSNode body_node(TSNode span_node) {
  return ts_node_child_by_field_name(function_node(span_node), "body", 4);
}

bool has_type(std::string_view type, std::initializer_list<std::string_view> types) {
  return std::find(types.begin(), types.end(), type) != types.end();
}

// ---------------------------------------------------------------------------
// Python occurrence classification

bool python_is_binding_target(const std::vector<Frame>& stack, std::size_t idx) {
  auto is_pattern = [](std::string_view type) {
    return has_type(type, {"pattern_list", "tuple_pattern", "list_pattern", "list_splat_pattern",
                           "dictionary_splat_pattern"});
  };
  while (idx > 0 && is_pattern(node_type(stack[idx - 1].node))) --idx;
  if (idx == 0) return false;
  const std::string_view container = node_type(stack[idx - 1].node);
  const std::string_view field = stack[idx].field;
  if ((container == "assignment" && field == "left") ||
      ((container == "for_statement" || container == "for_in_clause") && field == "left") ||
      (container == "named_expression" && field == "name") ||
      (container == "as_pattern" && field == "alias") || container == "as_pattern_target" ||
      container == "parameters" || container == "lambda_parameters" ||
      ((container == "default_parameter" || container == "typed_default_parameter") &&
       field == "name") ||
      (container == "typed_parameter" && field != "type")) {
    return true;
  }
  return false;
}

std::optional<CodeTokenKind> classify_python_identifier(const std::vector<Frame>& stack) {
  const std::size_t top = stack.size() - 1;
  if (top == 0) return CodeTokenKind::VariableUse;
  for (const auto& frame : stack) {
    if (node_type(frame.node) == "case_pattern") return std::nullopt;
  }
  const std::string_view parent = node_type(stack[top - 1].node);
  const std::string_view field = stack[top].field;
  if ((parent == "function_definition" || parent == "class_definition") && field == "name") {
    return std::nullopt;
  }
  if (parent == "keyword_argument" && field == "name") return std::nullopt;
  if (parent == "attribute" && field == "attribute") {
    if (top >= 2 && node_type(stack[top - 2].node) == "call" && stack[top - 1].field == "function") {
      return CodeTokenKind::FunctionCall;
    }
    if (python_is_binding_target(stack, top - 1)) return std::nullopt;
    return CodeTokenKind::VariableUse;
  }
  if (parent == "call" && field == "function") return CodeTokenKind::FunctionCall;
  if (python_is_binding_target(stack, top)) return std::nullopt;
  return CodeTokenKind::VariableUse;
}

bool python_is_docstring(const std::vector<Frame>& stack) {
  const std::size_t top = stack.size() - 1;
  if (top == 0) return false;
  const TSNode parent = stack[top - 1].node;
  return node_type(parent) == "expression_statement" && ts_node_named_child_count(parent) == 1;
}

bool python_has_interpolation(TSNode string_node) {
  const uint32_t count = ts_node_named_child_count(string_node);
  for (uint32_t i = 0; i < count; ++i) {
    if (node_type(ts_node_named_child(string_node, i)) == "interpolation") return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// C occurrence classification

std::optional<CodeTokenKind> classify_c_identifier(const std::vector<Frame>& stack) {
  const std::size_t top = stack.size() - 1;
  if (top == 0) return std::nullopt;
  const std::string_view parent = node_type(stack[top - 1].node);
  const std::string_view field = stack[top].field;
  if (field == "declarator") return std::nullopt;
  if (has_type(parent, {"preproc_def", "preproc_function_def", "preproc_params", "enumerator"})) {
    return std::nullopt;
  }
  if (parent == "call_expression" && field == "function") return CodeTokenKind::FunctionCall;
  return CodeTokenKind::VariableUse;
}

std::optional<CodeTokenKind> classify_c_field(const std::vector<Frame>& stack) {
  const std::size_t top = stack.size() - 1;
  if (top < 1) return std::nullopt;
  if (node_type(stack[top - 1].node) != "field_expression" || stack[top].field != "field") {
    return std::nullopt;
  }
  if (top >= 2 && node_type(stack[top - 2].node) == "call_expression" &&
      stack[top - 1].field == "function") {
    return CodeTokenKind::FunctionCall;
  }
  return CodeTokenKind::VariableUse;
}

bool is_operator_slot(const std::vector<Frame>& stack, Language language) {
  const std::size_t top = stack.size() - 1;
  if (top == 0 || ts_node_is_named(stack[top].node)) return false;
  const std::string_view parent = node_type(stack[top - 1].node);
  const std::string_view field = stack[top].field;
  if (field != "operator" && field != "operators") return false;
  if (language == Language::Python) {
    return has_type(parent, {"binary_operator", "comparison_operator", "boolean_operator",
                             "augmented_assignment"});
  }
  return has_type(parent, {"binary_expression", "assignment_expression"});
}

// Collects maskable uses under `root` (one outermost function).
std::vector<CodeToken> collect_tokens(const SyntaxTree& tree, TSNode root) {
  std::vector<CodeToken> out;
  const Language language = tree.language();
  auto emit = [&](TSNode node, CodeTokenKind kind) {
    out.push_back({node_range(node), kind, std::string(tree.node_text(node)),
                   std::string(node_type(node))});
  };
  detail::walk(root, [&](const std::vector<Frame>& stack) {
    const TSNode node = stack.back().node;
    const std::string_view type = node_type(node);
    if (type == "comment") return false;
    if (language == Language::Python) {
      if (has_type(type, {"import_statement", "import_from_statement", "future_import_statement",
                          "global_statement", "nonlocal_statement"})) {
        return false;
      }
      if (type == "identifier") {
        if (auto kind = classify_python_identifier(stack)) emit(node, *kind);
        return false;
      }
      if (type == "integer" || type == "float") {
        emit(node, CodeTokenKind::Literal);
        return false;
      }
      if (type == "string") {
        if (python_has_interpolation(node)) return true;
        if (!python_is_docstring(stack)) emit(node, CodeTokenKind::Literal);
        return false;
      }
    } else {
      if (type == "identifier") {
        if (auto kind = classify_c_identifier(stack)) emit(node, *kind);
        return false;
      }
      if (type == "field_identifier") {
        if (auto kind = classify_c_field(stack)) emit(node, *kind);
        return false;
      }
      if (type == "number_literal" || type == "string_literal") {
        emit(node, CodeTokenKind::Literal);
        return false;
      }
      if (type == "char_literal" || type == "preproc_include") return false;
    }
    if (is_operator_slot(stack, language)) {
      const std::string_view op = tree.node_text(node);
      if (lexicon::find_operator(language, op)) emit(node, CodeTokenKind::Operator);
      return false;
    }
    return true;
  });
  std::sort(out.begin(), out.end(),
            [](const CodeToken& a, const CodeToken& b) { return a.range.begin < b.range.begin; });
  return out;
}

TSNode find_span_node(const SyntaxTree& tree, const FunctionSpan& fn) {
  for (TSNode node : detail::outermost_functions(tree)) {
    if (node_range(node) == fn.byte_range) return node;
  }
  throw Error(ErrorCode::InvalidArgument, "function '" + fn.name + "' not found in unit");
}

bool whole_file_failed(TSNode root) {
  if (node_type(root) == "ERROR") return true;
  if (!ts_node_has_error(root)) return false;
  const uint32_t count = ts_node_named_child_count(root);
  if (count == 0) return true;
  for (uint32_t i = 0; i < count; ++i) {
    const TSNode child = ts_node_named_child(root, i);
    if (node_type(child) != "ERROR" && !ts_node_has_error(child) && node_type(child) != "comment") {
      return false;
    }
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// parse

SourceUnitPtr parse_unit(std::string path, Language language, std::string source_text) {
  if (!text::is_valid_utf8(source_text) || source_text.find('\0') != std::string::npos) {
    throw Error(ErrorCode::UnreadableFile, path + ": not UTF-8 text");
  }
  auto unit = std::make_shared<SourceUnit>();
  unit->path = std::move(path);
  unit->language = language;
  unit->text = std::move(source_text);
  if (unit->text.empty()) return unit;

  SyntaxTree tree(language, unit->text);
  if (!tree.valid() || whole_file_failed(tree.root())) {
    throw Error(ErrorCode::WholeFileParseFailure, unit->path + ": file does not parse");
  }
  const text::LineIndex lines(unit->text);
  for (TSNode node : detail::outermost_functions(tree)) {
    std::string name = function_name(tree, node);
    if (ts_node_has_error(node)) {
      log::debug(unit->path, ": skipping function '", name, "' with parse errors");
      unit->skipped_functions.push_back(std::move(name));
      continue;
    }
    FunctionSpan span;
    span.name = std::move(name);
    span.byte_range = node_range(node);
    span.line_range = {lines.line_of(span.byte_range.begin),
                       lines.line_of(span.byte_range.end == 0 ? 0 : span.byte_range.end - 1)};
    span.token_count = text::approx_token_count(tree.node_text(node));
    unit->functions.push_back(std::move(span));
  }
  return unit;
}

SourceUnitPtr load_unit(const std::filesystem::path& path, std::optional<Language> language) {
  if (!language) language = language_for_path(path);
  if (!language) {
    throw Error(ErrorCode::UnsupportedLanguage, path.string() + ": unsupported file type");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::UnreadableFile, path.string() + ": cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::UnreadableFile, path.string() + ": read failed");
  return parse_unit(path.generic_string(), *language, buf.str());
}

// ---------------------------------------------------------------------------
// tokens

std::vector<CodeToken> maskable_tokens(const SourceUnit& unit, std::size_t function_index) {
  const FunctionSpan& fn = unit.functions.at(function_index);
  SyntaxTree tree(unit.language, unit.text);
  return collect_tokens(tree, find_span_node(tree, fn));
}

std::vector<ScopeToken> scope_tokens(const SourceUnit& unit, std::size_t function_index) {
  const FunctionSpan& target = unit.functions.at(function_index);
  SyntaxTree tree(unit.language, unit.text);
  std::vector<ScopeToken> out;
  for (TSNode node : detail::outermost_functions(tree)) {
    const bool same = node_range(node) == target.byte_range;
    if (!same && ts_node_has_error(node)) continue;
    // Uses, then bindings (parameters, assignment targets) of the function.
    for (const CodeToken& token : collect_tokens(tree, node)) {
      out.push_back({token.text, token.kind, token.node_type, same});
    }
    const std::string_view name_field = "name";
    detail::walk(node, [&](const std::vector<Frame>& stack) {
      const TSNode n = stack.back().node;
      if (node_type(n) != "identifier") return true;
      const std::size_t top = stack.size() - 1;
      const std::string_view parent = top ? node_type(stack[top - 1].node) : "";
      if (unit.language == Language::Python) {
        if ((parent == "function_definition" || parent == "class_definition") &&
            stack[top].field == name_field) {
          return false;
        }
        if (!classify_python_identifier(stack)) {
          out.push_back({std::string(tree.node_text(n)), CodeTokenKind::VariableUse, "identifier", same});
        }
      } else if (stack[top].field == "declarator" && parent != "function_declarator") {
        out.push_back({std::string(tree.node_text(n)), CodeTokenKind::VariableUse, "identifier", same});
      }
      return false;
    });
  }
  // File-level globals.
  const TSNode root = tree.root();
  const uint32_t count = ts_node_named_child_count(root);
  for (uint32_t i = 0; i < count; ++i) {
    const TSNode child = ts_node_named_child(root, i);
    const std::string_view type = node_type(child);
    if (type != "expression_statement" && type != "declaration" && type != "preproc_def") continue;
    detail::walk(child, [&](const std::vector<Frame>& stack) {
      const TSNode n = stack.back().node;
      const std::string_view t = node_type(n);
      if (t == "function_declarator" || t == "parameter_list") return false;
      if (t == "identifier") {
        const std::size_t top = stack.size() - 1;
        const bool binding = unit.language == Language::Python
                                 ? !classify_python_identifier(stack).has_value()
                                 : (stack[top].field == "declarator" || stack[top].field == "name");
        if (binding) {
          out.push_back({std::string(tree.node_text(n)), CodeTokenKind::VariableUse, "identifier", false});
        }
        return false;
      }
      return true;
    });
  }
  return out;
}

std::string make_task_id(std::string_view path, const ByteRange& range, std::string_view original) {
  std::string key(path);
  key.push_back('\0');
  key += std::to_string(range.begin);
  key.push_back(':');
  key += std::to_string(range.end);
  key.push_back('\0');
  key += original;
  return text::hex64(text::fnv1a(key));
}

// ---------------------------------------------------------------------------
// file slicing

namespace {

struct Piece {
  std::size_t offset;
  std::string text;
};

std::string rstrip(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::size_t line_begin(std::string_view text, std::size_t offset) {
  while (offset > 0 && text[offset - 1] != '\n') --offset;
  return offset;
}

// Signature of a function definition: everything before its body.
std::string signature(const SyntaxTree& tree, TSNode span_node, std::size_t from) {
  const TSNode fn = function_node(span_node);
  const TSNode body = body_node(span_node);
  const std::size_t start = ts_node_start_byte(fn);
  const std::size_t end = ts_node_is_null(body) ? ts_node_end_byte(fn) : ts_node_start_byte(body);
  std::string out = std::string(tree.text().substr(from, start - from)) +
                    rstrip(tree.text().substr(start, end - start));
  out += tree.language() == Language::Python ? " ..." : ";";
  return out;
}

void python_pieces(const SyntaxTree& tree, TSNode container, const ByteRange& target,
                   std::vector<Piece>& out) {
  const std::string_view text = tree.text();
  const uint32_t count = ts_node_named_child_count(container);
  for (uint32_t i = 0; i < count; ++i) {
    const TSNode child = ts_node_named_child(container, i);
    const std::string_view type = node_type(child);
    const std::size_t start = ts_node_start_byte(child);
    const std::size_t from = line_begin(text, start);
    if (node_range(child) == target) continue;
    if (type == "expression_statement") {
      const TSNode inner = ts_node_named_child(child, 0);
      const std::string_view inner_type = ts_node_is_null(inner) ? "" : node_type(inner);
      if (inner_type == "assignment" || inner_type == "augmented_assignment") {
        out.push_back({start, std::string(text.substr(from, ts_node_end_byte(child) - from))});
      }
    } else if (has_type(type, {"import_statement", "import_from_statement", "future_import_statement"})) {
      out.push_back({start, std::string(text.substr(from, ts_node_end_byte(child) - from))});
    } else if (type == "function_definition" ||
               (type == "decorated_definition" &&
                node_type(function_node(child)) == "function_definition")) {
      out.push_back({start, signature(tree, child, line_begin(text, ts_node_start_byte(function_node(child))))});
    } else if (type == "class_definition" ||
               (type == "decorated_definition" && node_type(function_node(child)) == "class_definition")) {
      const TSNode cls = function_node(child);
      const TSNode body = ts_node_child_by_field_name(cls, "body", 4);
      const std::size_t cls_start = ts_node_start_byte(cls);
      const std::size_t header_end = ts_node_is_null(body) ? ts_node_end_byte(cls) : ts_node_start_byte(body);
      const std::size_t cls_from = line_begin(text, cls_start);
      out.push_back({cls_start, rstrip(text.substr(cls_from, header_end - cls_from))});
      if (!ts_node_is_null(body)) python_pieces(tree, body, target, out);
    }
  }
}

void c_pieces(const SyntaxTree& tree, TSNode container, const ByteRange& target,
              std::vector<Piece>& out) {
  const std::string_view text = tree.text();
  const uint32_t count = ts_node_child_count(container);
  for (uint32_t i = 0; i < count; ++i) {
    const TSNode child = ts_node_child(container, i);
    if (!ts_node_is_named(child)) continue;
    const std::string_view type = node_type(child);
    const std::size_t start = ts_node_start_byte(child);
    if (node_range(child) == target) continue;
    if (has_type(type, {"preproc_include", "preproc_def", "preproc_function_def", "declaration",
                        "type_definition"})) {
      out.push_back({start, rstrip(text.substr(start, ts_node_end_byte(child) - start))});
    } else if (has_type(type, {"struct_specifier", "enum_specifier", "union_specifier"})) {
      std::string piece = rstrip(text.substr(start, ts_node_end_byte(child) - start));
      const TSNode next = ts_node_next_sibling(child);
      if (!ts_node_is_null(next) && node_type(next) == ";") piece += ";";
      out.push_back({start, std::move(piece)});
    } else if (type == "function_definition") {
      out.push_back({start, signature(tree, child, start)});
    } else if (has_type(type, {"preproc_ifdef", "preproc_if", "preproc_else", "preproc_elif"})) {
      c_pieces(tree, child, target, out);
    }
  }
}

std::string join_pieces(const std::vector<Piece>& pieces) {
  std::string out;
  for (const auto& piece : pieces) {
    if (!out.empty()) out.push_back('\n');
    out += piece.text;
  }
  return out;
}

}  // namespace

SliceExtension slice_file_context(const SourceUnit& unit, std::size_t function_index) {
  const FunctionSpan& fn = unit.functions.at(function_index);
  SyntaxTree tree(unit.language, unit.text);
  std::vector<Piece> pieces;
  if (unit.language == Language::Python) {
    python_pieces(tree, tree.root(), fn.byte_range, pieces);
  } else {
    c_pieces(tree, tree.root(), fn.byte_range, pieces);
  }
  std::vector<Piece> before;
  std::vector<Piece> after;
  for (auto& piece : pieces) {
    if (piece.offset < fn.byte_range.begin) {
      before.push_back(std::move(piece));
    } else if (piece.offset >= fn.byte_range.end) {
      after.push_back(std::move(piece));
    }
  }
  SliceExtension ext;
  if (!before.empty()) ext.prefix = join_pieces(before) + "\n";
  if (!after.empty()) ext.suffix = "\n" + join_pieces(after);
  return ext;
}

// ---------------------------------------------------------------------------
// structural similarity

namespace {

std::uint64_t shape_hashes(TSNode node, std::vector<std::uint64_t>& out, std::size_t& size) {
  std::uint64_t h = text::fnv1a(ts_node_type(node));
  std::size_t subtree = 1;
  const uint32_t count = ts_node_child_count(node);
  for (uint32_t i = 0; i < count; ++i) {
    std::size_t child_size = 0;
    const std::uint64_t child = shape_hashes(ts_node_child(node, i), out, child_size);
    subtree += child_size;
    h = (h ^ child) * 0x100000001b3ULL + 0x9e3779b97f4a7c15ULL;
  }
  if (subtree >= 3) out.push_back(h);
  size = subtree;
  return h;
}

std::vector<std::uint64_t> shape_profile(TSNode node) {
  std::vector<std::uint64_t> hashes;
  std::size_t size = 0;
  shape_hashes(node, hashes, size);
  std::sort(hashes.begin(), hashes.end());
  return hashes;
}

double multiset_jaccard(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t i = 0, j = 0, inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

double structural_similarity(const SourceUnit& unit, std::size_t a, std::size_t b) {
  SyntaxTree tree(unit.language, unit.text);
  const auto pa = shape_profile(find_span_node(tree, unit.functions.at(a)));
  const auto pb = shape_profile(find_span_node(tree, unit.functions.at(b)));
  return multiset_jaccard(pa, pb);
}

// ---------------------------------------------------------------------------
// enumeration

TaskEnumeration enumerate_tasks(const SourceUnitPtr& unit, ContextStrategy strategy,
                                const TaskLimits& limits) {
  TaskEnumeration result;
  if (!unit || unit->functions.empty()) return result;
  const TokenCounter counter = limits.token_counter ? limits.token_counter : TokenCounter(text::approx_token_count);
  SyntaxTree tree(unit->language, unit->text);
  const text::LineIndex lines(unit->text);

  std::vector<TSNode> nodes;
  nodes.reserve(unit->functions.size());
  for (const auto& fn : unit->functions) nodes.push_back(find_span_node(tree, fn));

  std::vector<bool> gated(unit->functions.size(), true);
  if (limits.ast_similarity_gating && unit->language == Language::C) {
    std::vector<std::vector<std::uint64_t>> profiles;
    for (TSNode node : nodes) profiles.push_back(shape_profile(node));
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      bool twin = false;
      for (std::size_t j = 0; j < nodes.size() && !twin; ++j) {
        twin = i != j && multiset_jaccard(profiles[i], profiles[j]) >= limits.similarity_threshold;
      }
      gated[i] = twin;
    }
  }

  std::optional<bool> file_fits;
  for (std::size_t f = 0; f < unit->functions.size(); ++f) {
    const FunctionSpan& fn = unit->functions[f];
    std::vector<CodeToken> tokens = collect_tokens(tree, nodes[f]);
    if (!gated[f]) {
      result.gated_out += tokens.size();
      continue;
    }
    const std::size_t snippet_begin = unit->snippet_begin(fn);
    const std::string_view snippet = unit->snippet(fn);
    SliceExtension ext;
    if (strategy == ContextStrategy::SlicedFile) ext = slice_file_context(*unit, f);

    bool fits = true;
    switch (strategy) {
      case ContextStrategy::Function:
        fits = counter(snippet) <= limits.max_context_tokens;
        break;
      case ContextStrategy::SlicedFile:
        fits = counter(ext.prefix + std::string(snippet) + ext.suffix) <= limits.max_context_tokens;
        break;
      case ContextStrategy::File:
        if (!file_fits) file_fits = counter(unit->text) <= limits.max_context_tokens;
        fits = *file_fits;
        break;
    }
    if (!fits) {
      result.dropped_too_long += tokens.size();
      continue;
    }

    for (auto& token : tokens) {
      InfillingTask task;
      task.task_id = make_task_id(unit->path, token.range, token.text);
      task.unit = unit;
      task.function_index = f;
      task.mask = token.range;
      task.original = std::move(token.text);
      task.kind = token.kind;
      task.context = strategy;
      task.line_no = lines.line_of(token.range.begin);
      const std::string_view text = unit->text;
      switch (strategy) {
        case ContextStrategy::Function:
          task.prefix = text.substr(snippet_begin, token.range.begin - snippet_begin);
          task.suffix = text.substr(token.range.end, fn.byte_range.end - token.range.end);
          break;
        case ContextStrategy::SlicedFile:
          task.prefix = ext.prefix;
          task.prefix += text.substr(snippet_begin, token.range.begin - snippet_begin);
          task.suffix = text.substr(token.range.end, fn.byte_range.end - token.range.end);
          task.suffix += ext.suffix;
          break;
        case ContextStrategy::File:
          task.prefix = text.substr(0, token.range.begin);
          task.suffix = text.substr(token.range.end);
          break;
      }
      result.tasks.push_back(std::move(task));
    }
  }
  return result;
}

bool substitution_parses(const SourceUnit& unit, const ByteRange& range,
                         std::string_view replacement, CodeTokenKind kind) {
  if (range.end > unit.text.size() || range.begin > range.end) return false;
  std::string mutated = unit.text.substr(0, range.begin);
  mutated += replacement;
  mutated += std::string_view(unit.text).substr(range.end);
  SyntaxTree tree(unit.language, mutated);
  if (!tree.valid()) return false;
  const ByteRange target{range.begin, range.begin + replacement.size()};
  for (TSNode node : detail::outermost_functions(tree)) {
    if (!node_range(node).contains(target)) continue;
    if (ts_node_has_error(node)) return false;
    for (const CodeToken& token : collect_tokens(tree, node)) {
      if (token.range == target) return token.kind == kind && token.text == replacement;
    }
    return false;
  }
  return false;
}

}  // namespace tibscan

#pragma once

#include <tree_sitter/api.h>

#include <memory>
#include <string_view>

#include "tibscan/source.hpp"

namespace tibscan::detail {

struct TreeDeleter {
  void operator()(TSTree* tree) const noexcept { ts_tree_delete(tree); }
};

/// Owns one parse of a text buffer. The buffer must outlive the tree.
class SyntaxTree {
 public:
  SyntaxTree(Language language, std::string_view text);

  bool valid() const noexcept { return tree_ != nullptr; }
  TSNode root() const noexcept { return ts_tree_root_node(tree_.get()); }
  std::string_view text() const noexcept { return text_; }
  Language language() const noexcept { return language_; }

  std::string_view node_text(TSNode node) const noexcept {
    return text_.substr(ts_node_start_byte(node), ts_node_end_byte(node) - ts_node_start_byte(node));
  }

 private:
  std::unique_ptr<TSTree, TreeDeleter> tree_;
  std::string_view text_;
  Language language_;
};

inline std::string_view node_type(TSNode node) noexcept { return ts_node_type(node); }

inline ByteRange node_range(TSNode node) noexcept {
  return {ts_node_start_byte(node), ts_node_end_byte(node)};
}

/// One step of the path from the walk root to the current node.
struct Frame {
  TSNode node;
  std::string_view field;  // field name of `node` within its parent, or empty
};

/// Depth-first pre-order walk with an explicit ancestor stack. The visitor
/// returns false to skip a node's children.
template <typename Visitor>
void walk(TSNode root, Visitor&& visit) {
  std::vector<Frame> stack;
  auto recurse = [&](auto&& self, TSNode node, std::string_view field) -> void {
    stack.push_back({node, field});
    if (visit(stack)) {
      const uint32_t count = ts_node_child_count(node);
      for (uint32_t i = 0; i < count; ++i) {
        const char* child_field = ts_node_field_name_for_child(node, i);
        self(self, ts_node_child(node, i), child_field ? child_field : std::string_view{});
      }
    }
    stack.pop_back();
  };
  recurse(recurse, root, {});
}

/// Outermost function-definition nodes of the tree, in file order.
std::vector<TSNode> outermost_functions(const SyntaxTree& tree);

}  // namespace tibscan::detail

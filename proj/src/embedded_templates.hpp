#pragma once

#include <cstddef>
#include <string_view>

namespace tibscan::detail {

struct EmbeddedFile {
  std::string_view name;
  std::string_view content;
};

// Generated at build time from templates/.
extern const EmbeddedFile kEmbeddedFiles[];
extern const std::size_t kEmbeddedFileCount;

}  // namespace tibscan::detail

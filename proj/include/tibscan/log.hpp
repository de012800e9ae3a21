#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <string_view>

namespace tibscan::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

using Sink = std::function<void(Level, std::string_view)>;

// Replaces the process-wide sink. An empty sink restores the stderr default.
void set_sink(Sink sink);
void set_level(Level level);
Level level();
void write(Level level, std::string_view message);

namespace detail {
template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}
}  // namespace detail

template <typename... Args>
void debug(Args&&... args) {
  if (level() <= Level::Debug) write(Level::Debug, detail::concat(std::forward<Args>(args)...));
}
template <typename... Args>
void info(Args&&... args) {
  if (level() <= Level::Info) write(Level::Info, detail::concat(std::forward<Args>(args)...));
}
template <typename... Args>
void warn(Args&&... args) {
  if (level() <= Level::Warn) write(Level::Warn, detail::concat(std::forward<Args>(args)...));
}
template <typename... Args>
void error(Args&&... args) {
  if (level() <= Level::Error) write(Level::Error, detail::concat(std::forward<Args>(args)...));
}

}  // namespace tibscan::log

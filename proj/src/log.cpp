#include "tibscan/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace tibscan::log {
namespace {

std::mutex sink_mutex;
Sink current_sink;
std::atomic<Level> current_level{Level::Warn};

std::string_view label(Level level) {
  switch (level) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
    case Level::Off: break;
  }
  return "";
}

}  // namespace

void set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex);
  current_sink = std::move(sink);
}

void set_level(Level level) { current_level.store(level); }

Level level() { return current_level.load(); }

void write(Level level, std::string_view message) {
  if (level < current_level.load() || level == Level::Off) return;
  std::lock_guard lock(sink_mutex);
  if (current_sink) {
    current_sink(level, message);
    return;
  }
  std::cerr << "[tibscan " << label(level) << "] " << message << '\n';
}

}  // namespace tibscan::log

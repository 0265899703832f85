#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string_view>

namespace trajguard {

enum class LogLevel { debug, info, warn, error };

using LogSink = std::function<void(LogLevel, std::string_view)>;

namespace detail {

struct LogState {
  std::mutex mutex;
  LogSink sink;
  LogLevel threshold = LogLevel::warn;
};

inline LogState& log_state() {
  static LogState state;
  return state;
}

inline std::string_view level_name(LogLevel level) {
  switch (level) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warn: return "warn";
    case LogLevel::error: return "error";
  }
  return "?";
}

}  // namespace detail

/// Replaces the process-wide sink. An empty sink restores stderr output.
inline void set_log_sink(LogSink sink) {
  auto& state = detail::log_state();
  std::lock_guard lock(state.mutex);
  state.sink = std::move(sink);
}

inline void set_log_threshold(LogLevel level) {
  auto& state = detail::log_state();
  std::lock_guard lock(state.mutex);
  state.threshold = level;
}

inline void log(LogLevel level, std::string_view message) {
  auto& state = detail::log_state();
  std::lock_guard lock(state.mutex);
  if (state.sink) {
    state.sink(level, message);
    return;
  }
  if (level < state.threshold) return;
  std::clog << "[trajguard:" << detail::level_name(level) << "] " << message << '\n';
}

}  // namespace trajguard

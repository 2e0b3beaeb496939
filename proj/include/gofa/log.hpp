#pragma once

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace gofa::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

/// Verbosity from GOFA_LOG (error|warn|info|debug); defaults to warn.
inline Level& threshold() {
  static Level level = [] {
    const char* env = std::getenv("GOFA_LOG");
    if (!env) return Level::warn;
    const std::string_view v(env);
    if (v == "error") return Level::error;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
  }();
  return level;
}

inline void write(Level level, std::string_view msg) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << "[gofa:" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void error(std::string_view msg) { write(Level::error, msg); }
inline void warn(std::string_view msg) { write(Level::warn, msg); }
inline void info(std::string_view msg) { write(Level::info, msg); }
inline void debug(std::string_view msg) { write(Level::debug, msg); }

/// Warns for the first `limit` events counted by `counter`, then goes quiet.
inline void warn_limited(std::atomic<long>& counter, std::string_view msg, long limit = 5) {
  const long n = ++counter;
  if (n <= limit) warn(msg);
  if (n == limit) warn("further warnings of this kind suppressed");
}

}  // namespace gofa::log

#pragma once

#include <iostream>
#include <sstream>
#include <string>

namespace rcc::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

// Process-wide threshold; messages below it are dropped.
inline Level& threshold() {
  static Level level = Level::kInfo;
  return level;
}

inline void emit(Level level, const std::string& msg) {
  if (level < threshold()) return;
  static const char* tags[] = {"DEBUG", "INFO", "WARN", "ERROR"};
  std::cerr << "[" << tags[static_cast<int>(level)] << "] " << msg << "\n";
}

template <typename... Args>
void debug(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  emit(Level::kDebug, os.str());
}

template <typename... Args>
void info(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  emit(Level::kInfo, os.str());
}

template <typename... Args>
void warn(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  emit(Level::kWarn, os.str());
}

template <typename... Args>
void error(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  emit(Level::kError, os.str());
}

}  // namespace rcc::log

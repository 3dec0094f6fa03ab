#include "gaaf/log.hpp"

#include <atomic>
#include <iostream>

namespace gaaf {

namespace {
std::atomic<LogLevel> g_level{LogLevel::Info};

void emit(LogLevel level, std::string_view tag, std::string_view message) {
  if (static_cast<int>(level) > static_cast<int>(g_level.load())) return;
  std::clog << "gaaf " << tag << ": " << message << '\n';
}
}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log_info(std::string_view message) { emit(LogLevel::Info, "info", message); }
void log_warn(std::string_view message) { emit(LogLevel::Warn, "warning", message); }

}  // namespace gaaf

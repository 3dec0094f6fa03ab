#pragma once

#include <string_view>

namespace gaaf {

enum class LogLevel { Quiet = 0, Warn = 1, Info = 2 };

/// Process-wide threshold; messages above it are dropped. Default Info.
void set_log_level(LogLevel level);
LogLevel log_level();

/// One line on stderr, prefixed with the level.
void log_info(std::string_view message);
void log_warn(std::string_view message);

}  // namespace gaaf

#include "langtraj/common.hpp"

#include <cstdlib>

namespace langtraj {

LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("LANGTRAJ_LOG");
    if (!env) return LogLevel::Info;
    std::string_view v(env);
    if (v == "quiet") return LogLevel::Quiet;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::Info) std::fprintf(stderr, "[langtraj] %s\n", msg.c_str());
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::Debug) std::fprintf(stderr, "[langtraj:debug] %s\n", msg.c_str());
}

}  // namespace langtraj

// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#include "cmaxloc/log.hpp"

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace cmaxloc {

namespace {

LogLevel ParseLevel() {
  const char* env = std::getenv("CMAXLOC_LOG");
  if (env == nullptr || *env == '\0') return LogLevel::kWarn;
  if (std::strcmp(env, "off") == 0 || std::strcmp(env, "none") == 0)
    return LogLevel::kOff;
  if (std::strcmp(env, "error") == 0) return LogLevel::kError;
  if (std::strcmp(env, "warn") == 0) return LogLevel::kWarn;
  if (std::strcmp(env, "info") == 0) return LogLevel::kInfo;
  if (std::strcmp(env, "debug") == 0) return LogLevel::kDebug;
  std::fprintf(stderr, "[cmaxloc] unknown CMAXLOC_LOG value '%s', using warn\n", env);
  return LogLevel::kWarn;
}

void Emit(const char* tag, const char* fmt, va_list args) {
  std::fprintf(stderr, "[cmaxloc %s] ", tag);
  std::vfprintf(stderr, fmt, args);
  std::fputc('\n', stderr);
}

}  // namespace

LogLevel GlobalLogLevel() {
  static const LogLevel level = ParseLevel();
  return level;
}

bool LogEnabled(LogLevel level) {
  return static_cast<int>(level) <= static_cast<int>(GlobalLogLevel());
}

#define CMAXLOC_DEFINE_LOG(Name, level, tag)           \
  void Name(const char* fmt, ...) {                    \
    if (!LogEnabled(level)) return;                    \
    va_list args;                                      \
    va_start(args, fmt);                               \
    Emit(tag, fmt, args);                              \
    va_end(args);                                      \
  }

CMAXLOC_DEFINE_LOG(LogError, LogLevel::kError, "error")
CMAXLOC_DEFINE_LOG(LogWarn, LogLevel::kWarn, "warn")
CMAXLOC_DEFINE_LOG(LogInfo, LogLevel::kInfo, "info")
CMAXLOC_DEFINE_LOG(LogDebug, LogLevel::kDebug, "debug")

#undef CMAXLOC_DEFINE_LOG

}  // namespace cmaxloc

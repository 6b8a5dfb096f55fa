// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#pragma once

namespace cmaxloc {

// Diagnostic verbosity, selected once per process through the CMAXLOC_LOG
// environment variable: off | error | warn | info | debug. Default: warn.
enum class LogLevel { kOff = 0, kError, kWarn, kInfo, kDebug };

LogLevel GlobalLogLevel();
bool LogEnabled(LogLevel level);

void LogError(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void LogWarn(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void LogInfo(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void LogDebug(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

}  // namespace cmaxloc

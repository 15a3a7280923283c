#pragma once

#include <cstdint>
#include <functional>
#include <string>

namespace simplexts {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Level read once from SIMPLEXTS_LOG (error|warn|info|debug), default warn.
LogLevel log_level();
void log(LogLevel level, const std::string& message);

inline void log_error(const std::string& m) { log(LogLevel::Error, m); }
inline void log_warn(const std::string& m) { log(LogLevel::Warn, m); }
inline void log_info(const std::string& m) { log(LogLevel::Info, m); }
inline void log_debug(const std::string& m) { log(LogLevel::Debug, m); }

// Runs fn(i) for i in [0, count). threads <= 0 means hardware concurrency.
// Work is partitioned by index, so any per-index output written to
// preallocated slots is deterministic regardless of scheduling.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

// Shortest-width decimal with 17 significant digits (round-trip exact).
std::string format_double(double x);

}  // namespace simplexts

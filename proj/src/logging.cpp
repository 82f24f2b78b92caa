#include "astra/logging.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

#include "astra/errors.hpp"

namespace astra {

namespace {

std::atomic<LogLevel> g_level{LogLevel::info};
std::mutex g_mutex;

const char* level_name(LogLevel level) {
    switch (level) {
        case LogLevel::debug: return "debug";
        case LogLevel::info: return "info";
        case LogLevel::warn: return "warn";
        case LogLevel::error: return "error";
    }
    return "?";
}

}  // namespace

LogLevel log_level_from_string(const std::string& name) {
    if (name == "debug") return LogLevel::debug;
    if (name == "info") return LogLevel::info;
    if (name == "warn") return LogLevel::warn;
    if (name == "error") return LogLevel::error;
    throw value_error("unknown log level: " + name);
}

void set_log_level(LogLevel level) { g_level.store(level); }

LogLevel log_level() { return g_level.load(); }

void log(LogLevel level, const std::string& message) {
    if (static_cast<int>(level) < static_cast<int>(g_level.load())) {
        return;
    }
    std::lock_guard<std::mutex> lock(g_mutex);
    std::cerr << "[" << level_name(level) << "] " << message << "\n";
}

}  // namespace astra

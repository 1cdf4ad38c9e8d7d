#pragma once

#include "dash/core/types.hpp"

#include <chrono>
#include <iostream>
#include <mutex>
#include <string>

namespace dash {

/// One JSON object per line: {"ts", "level", "event", ...fields}.
class Logger {
public:
    enum class Level { debug, info, warn, error };

    explicit Logger(std::ostream* out = &std::cerr, Level min = Level::info) : out_(out), min_(min) {}

    static Logger& null() {
        static Logger l(nullptr);
        return l;
    }

    void log(Level level, const std::string& event, Json fields = Json::object()) {
        if (!out_ || level < min_) return;
        Json line{{"ts", now_ms()}, {"level", name(level)}, {"event", event}};
        if (fields.is_object()) line.update(fields);
        std::lock_guard lock(mutex_);
        *out_ << line.dump() << '\n';
        out_->flush();
    }

    void debug(const std::string& e, Json f = Json::object()) { log(Level::debug, e, std::move(f)); }
    void info(const std::string& e, Json f = Json::object()) { log(Level::info, e, std::move(f)); }
    void warn(const std::string& e, Json f = Json::object()) { log(Level::warn, e, std::move(f)); }
    void error(const std::string& e, Json f = Json::object()) { log(Level::error, e, std::move(f)); }

private:
    static const char* name(Level l) {
        switch (l) {
            case Level::debug: return "debug";
            case Level::info: return "info";
            case Level::warn: return "warn";
            case Level::error: return "error";
        }
        return "?";
    }

    static long long now_ms() {
        using namespace std::chrono;
        return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
    }

    std::ostream* out_;
    Level min_;
    std::mutex mutex_;
};

} // namespace dash

#include "odebayes/log.hpp"
#include "odebayes/error.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace odebayes {

std::string_view to_string(ErrorCategory c) noexcept {
    switch (c) {
    case ErrorCategory::InvalidArgument: return "invalid-argument";
    case ErrorCategory::Domain: return "domain";
    case ErrorCategory::Numeric: return "numeric";
    case ErrorCategory::IllPosedDesign: return "ill-posed-design";
    case ErrorCategory::OptimizationFailure: return "optimization-failure";
    case ErrorCategory::DegenerateModel: return "degenerate-model";
    case ErrorCategory::Parse: return "parse";
    case ErrorCategory::Io: return "io";
    }
    return "unknown";
}

namespace log {
namespace {
std::atomic<int> g_level{static_cast<int>(Level::Warn)};
std::mutex g_mutex;

const char* tag(Level l) {
    switch (l) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warning";
    case Level::Error: return "error";
    default: return "";
    }
}
} // namespace

void set_level(Level level) { g_level.store(static_cast<int>(level)); }
Level level() { return static_cast<Level>(g_level.load()); }

void write(Level l, const std::string& msg) {
    if (static_cast<int>(l) < g_level.load()) return;
    std::lock_guard<std::mutex> lock(g_mutex);
    std::clog << "[odebayes " << tag(l) << "] " << msg << '\n';
}

} // namespace log
} // namespace odebayes

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace odebayes {

enum class ErrorCategory {
    InvalidArgument,
    Domain,
    Numeric,
    IllPosedDesign,
    OptimizationFailure,
    DegenerateModel,
    Parse,
    Io,
};

std::string_view to_string(ErrorCategory c) noexcept;

/// Base exception; every failure raised by the library carries a category so
/// front ends can map it to an exit code without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

[[noreturn]] inline void throw_invalid(const std::string& msg) {
    throw Error(ErrorCategory::InvalidArgument, msg);
}

[[noreturn]] inline void throw_numeric(const std::string& msg) {
    throw Error(ErrorCategory::Numeric, msg);
}

} // namespace odebayes

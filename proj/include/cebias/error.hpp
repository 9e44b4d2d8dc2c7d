#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cebias {

enum class ErrorKind {
    Format,
    UnsupportedEncoding,
    DataIntegrity,
    Io,
    Precondition,
    Schema,
    Integrity,
    Shape,
    DegenerateData,
    Numerical,
    Meta,
    UndefinedSimilarity,
    EmptyReport,
    ExhaustedPool,
    BaselineMissing,
    Config,
};

std::string_view to_string(ErrorKind kind) noexcept;

// All library failures are reported through this type; `kind()` lets callers
// branch on the failure class without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), detail_(message) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) fail(kind, message);
}

}  // namespace cebias

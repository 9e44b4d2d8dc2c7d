#include "cebias/error.hpp"

namespace cebias {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Format: return "format error";
        case ErrorKind::UnsupportedEncoding: return "unsupported encoding";
        case ErrorKind::DataIntegrity: return "data integrity error";
        case ErrorKind::Io: return "I/O error";
        case ErrorKind::Precondition: return "precondition violated";
        case ErrorKind::Schema: return "schema error";
        case ErrorKind::Integrity: return "integrity error";
        case ErrorKind::Shape: return "shape error";
        case ErrorKind::DegenerateData: return "degenerate data";
        case ErrorKind::Numerical: return "numerical error";
        case ErrorKind::Meta: return "metadata mismatch";
        case ErrorKind::UndefinedSimilarity: return "undefined similarity";
        case ErrorKind::EmptyReport: return "empty report";
        case ErrorKind::ExhaustedPool: return "exhausted background pool";
        case ErrorKind::BaselineMissing: return "baseline missing";
        case ErrorKind::Config: return "config error";
    }
    return "error";
}

}  // namespace cebias

#include "spikescore/error.hpp"

namespace spikescore {

std::string_view error_kind_name(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::OutOfRange: return "out_of_range";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Io: return "io";
    case ErrorKind::Backend: return "backend";
    case ErrorKind::Config: return "config";
    case ErrorKind::Internal: return "internal";
    }
    return "internal";
}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace spikescore

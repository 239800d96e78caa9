#include "msinfer/error.hpp"

namespace msinfer {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "invalid-argument";
        case ErrorKind::Io: return "io";
        case ErrorKind::CorruptFile: return "corrupt-file";
        case ErrorKind::Schema: return "schema";
        case ErrorKind::Numerical: return "numerical";
        case ErrorKind::Diverged: return "diverged";
        case ErrorKind::InsufficientData: return "insufficient-data";
    }
    return "unknown";
}

int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidArgument:
        case ErrorKind::Schema:
            return 2;
        case ErrorKind::Numerical:
        case ErrorKind::Diverged:
        case ErrorKind::InsufficientData:
            return 3;
        case ErrorKind::Io:
        case ErrorKind::CorruptFile:
            return 4;
    }
    return 1;
}

}  // namespace msinfer

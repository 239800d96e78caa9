#pragma once

#include <stdexcept>
#include <string>

namespace msinfer {

enum class ErrorKind {
    InvalidArgument,
    Io,
    CorruptFile,
    Schema,
    Numerical,
    Diverged,
    InsufficientData,
};

[[nodiscard]] const char* to_string(ErrorKind kind) noexcept;

/// Process exit code for the CLI: 2 invalid config, 3 numerical failure, 4 I/O.
[[nodiscard]] int exit_code(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool condition, const std::string& what) {
    if (!condition) throw Error(ErrorKind::InvalidArgument, what);
}

}  // namespace msinfer

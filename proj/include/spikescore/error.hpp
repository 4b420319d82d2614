#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spikescore {

/// Machine-readable failure classes. The CLI prints `error: <class>: <detail>`.
enum class ErrorKind {
    InvalidArgument,
    OutOfRange,
    Degenerate,
    Parse,
    Schema,
    Io,
    Backend,
    Config,
    Internal,
};

std::string_view error_kind_name(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Raised by chat and embedding backends; consumed by the retry policy.
class BackendError : public Error {
public:
    enum class Cause { Transport, Timeout, HttpStatus, MalformedResponse, EmptyReply, Unsupported };

    BackendError(Cause cause, const std::string& what, int http_status = 0)
        : Error(ErrorKind::Backend, what), cause_(cause), http_status_(http_status) {}

    [[nodiscard]] Cause cause() const noexcept { return cause_; }
    [[nodiscard]] int http_status() const noexcept { return http_status_; }

private:
    Cause cause_;
    int http_status_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

}  // namespace spikescore

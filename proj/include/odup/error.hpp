#pragma once

#include <stdexcept>
#include <string>

namespace odup {

enum class ErrorKind {
    invalid_argument,
    config,
    data,
    diverged,
    protocol,
    io,
};

// Base exception for the library. The kind drives CLI exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Exit codes: 0 success, 2 usage/config, 3 data, 4 numeric divergence, 5 protocol divergence.
inline int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::invalid_argument:
    case ErrorKind::config:
        return 2;
    case ErrorKind::data:
    case ErrorKind::io:
        return 3;
    case ErrorKind::diverged:
        return 4;
    case ErrorKind::protocol:
        return 5;
    }
    return 1;
}

[[noreturn]] inline void throw_invalid(const std::string& what) {
    throw Error(ErrorKind::invalid_argument, what);
}

inline void require(bool cond, const std::string& what) {
    if (!cond) throw_invalid(what);
}

}  // namespace odup

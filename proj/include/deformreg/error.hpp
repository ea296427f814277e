#pragma once

#include <stdexcept>
#include <string>

namespace deformreg {

enum class ErrorKind {
    Io,            // missing/unreadable/unwritable file
    InvalidDims,   // non-positive or otherwise unusable dimensions
    SizeMismatch,  // payload length disagrees with the header
    NonFinite,     // NaN/Inf where finite values are required
    DimsMismatch,  // two operands with incompatible shapes
    Validation,    // a domain invariant does not hold
    Usage,         // bad arguments / mode combination
    Numerical,     // NaN guard tripped during optimisation
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

} // namespace deformreg

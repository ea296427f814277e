#include "deformreg/error.hpp"

namespace deformreg {

const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Io: return "io";
    case ErrorKind::InvalidDims: return "invalid-dims";
    case ErrorKind::SizeMismatch: return "size-mismatch";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::DimsMismatch: return "dims-mismatch";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Numerical: return "numerical";
    }
    return "unknown";
}

} // namespace deformreg

// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ellipcert {

struct SourceLoc {
    int line = 0;
    int col = 0;

    friend bool operator==(const SourceLoc&, const SourceLoc&) = default;

    [[nodiscard]] std::string str() const { return std::to_string(line) + ":" + std::to_string(col); }
};

enum class ErrorKind {
    Syntax,
    NonConstantBound,
    Undeclared,
    Unsupported,
    UnrollLimit,
    Role,
    UnmatchedStatement,
    InvalidParameter,
    NotInvertible,
    NotProjectable,
    DimensionMismatch,
    NonFinite,
    SpectralRadiusTooLarge,
    Format,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
    case ErrorKind::Syntax: return "syntax error";
    case ErrorKind::NonConstantBound: return "non-constant bound";
    case ErrorKind::Undeclared: return "undeclared identifier";
    case ErrorKind::Unsupported: return "unsupported construct";
    case ErrorKind::UnrollLimit: return "unroll limit exceeded";
    case ErrorKind::Role: return "role error";
    case ErrorKind::UnmatchedStatement: return "unmatched statement";
    case ErrorKind::InvalidParameter: return "invalid parameter";
    case ErrorKind::NotInvertible: return "matrix not invertible";
    case ErrorKind::NotProjectable: return "not projectable";
    case ErrorKind::DimensionMismatch: return "dimension mismatch";
    case ErrorKind::NonFinite: return "non-finite value";
    case ErrorKind::SpectralRadiusTooLarge: return "spectral radius too large";
    case ErrorKind::Format: return "format error";
    }
    return "error";
}

/// Every failure raised by the library. Frontend errors carry a source location.
class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message, SourceLoc loc = {})
        : std::runtime_error(message), kind_(kind), loc_(loc) {}

    [[nodiscard]] ErrorKind kind() const { return kind_; }
    [[nodiscard]] SourceLoc loc() const { return loc_; }
    [[nodiscard]] bool has_loc() const { return loc_.line > 0; }

  private:
    ErrorKind kind_;
    SourceLoc loc_;
};

} // namespace ellipcert

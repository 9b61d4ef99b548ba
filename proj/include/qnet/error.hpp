#pragma once

#include <stdexcept>
#include <string>

namespace qnet {

enum class ErrorCode {
    NonIntegerSubnet,
    InvalidPlan,
    InvalidConfig,
    UnsortedInput,
    BadMagic,
    BadVersion,
    BadHeader,
    BadRecord,
    CountMismatch,
    TruncatedFile,
    Io,
    ZeroBinWidth,
    NoPeakFound,
    IndexMismatch,
    Degenerate,
    DomainError,
};

const char* to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch on the kind.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what);

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace qnet

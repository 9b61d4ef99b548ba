#include "qnet/error.hpp"

namespace qnet {

const char* to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::NonIntegerSubnet: return "NonIntegerSubnet";
    case ErrorCode::InvalidPlan: return "InvalidPlan";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnsortedInput: return "UnsortedInput";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadVersion: return "BadVersion";
    case ErrorCode::BadHeader: return "BadHeader";
    case ErrorCode::BadRecord: return "BadRecord";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::Io: return "Io";
    case ErrorCode::ZeroBinWidth: return "ZeroBinWidth";
    case ErrorCode::NoPeakFound: return "NoPeakFound";
    case ErrorCode::IndexMismatch: return "IndexMismatch";
    case ErrorCode::Degenerate: return "Degenerate";
    case ErrorCode::DomainError: return "DomainError";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
{
}

}  // namespace qnet

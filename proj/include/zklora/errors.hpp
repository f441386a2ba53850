#pragma once

#include <stdexcept>
#include <string>

namespace zklora {

enum class ErrorKind {
    OutOfRange,
    NonFinite,
    Overflow,
    OverflowBound,
    BadMagic,
    VersionUnsupported,
    CorruptHeader,
    BoundsViolation,
    LabelTooLong,
    RowTooLong,
    LengthMismatch,
    BudgetExceeded,
    WitnessMismatch,
    MissingProof,
    DuplicateModule,
    MissingWitness,
    CorruptProofFile,
    ConnectFailed,
    ProtocolError,
    ProfileMismatch,
    UnknownModule,
    DimMismatch,
    UnsupportedProfile,
    RegimeTooLarge,
    UsageError,
    IoError,
    Internal,
};

class Error : public std::runtime_error {
 public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

 private:
    ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::OutOfRange: return "OutOfRange";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::Overflow: return "Overflow";
        case ErrorKind::OverflowBound: return "OverflowBound";
        case ErrorKind::BadMagic: return "BadMagic";
        case ErrorKind::VersionUnsupported: return "VersionUnsupported";
        case ErrorKind::CorruptHeader: return "CorruptHeader";
        case ErrorKind::BoundsViolation: return "BoundsViolation";
        case ErrorKind::LabelTooLong: return "LabelTooLong";
        case ErrorKind::RowTooLong: return "RowTooLong";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::BudgetExceeded: return "BudgetExceeded";
        case ErrorKind::WitnessMismatch: return "WitnessMismatch";
        case ErrorKind::MissingProof: return "MissingProof";
        case ErrorKind::DuplicateModule: return "DuplicateModule";
        case ErrorKind::MissingWitness: return "MissingWitness";
        case ErrorKind::CorruptProofFile: return "CorruptProofFile";
        case ErrorKind::ConnectFailed: return "ConnectFailed";
        case ErrorKind::ProtocolError: return "ProtocolError";
        case ErrorKind::ProfileMismatch: return "ProfileMismatch";
        case ErrorKind::UnknownModule: return "UnknownModule";
        case ErrorKind::DimMismatch: return "DimMismatch";
        case ErrorKind::UnsupportedProfile: return "UnsupportedProfile";
        case ErrorKind::RegimeTooLarge: return "RegimeTooLarge";
        case ErrorKind::UsageError: return "UsageError";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::Internal: return "Internal";
    }
    return "Unknown";
}

}  // namespace zklora

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace adpq {

enum class ErrorCode {
    // configuration / input validation
    AlphaOutOfRange,
    BitsOutOfRange,
    GroupSizeInvalid,
    ClipOutOfRange,
    PiOutOfRange,
    EmptyInput,
    NonFiniteInput,
    ShapeMismatch,
    NameMismatch,
    BadSpec,
    // file and stream formats
    IoError,
    BadMagic,
    BadVersion,
    HeaderParse,
    TruncatedData,
    NonFiniteValue,
    Truncated,
    IndexOutOfGroup,
    NonMonotonicOutlierIndices,
    // broken internal contracts
    InvariantViolation,
    CorruptQuantizedTensor,
};

inline constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::AlphaOutOfRange: return "AlphaOutOfRange";
        case ErrorCode::BitsOutOfRange: return "BitsOutOfRange";
        case ErrorCode::GroupSizeInvalid: return "GroupSizeInvalid";
        case ErrorCode::ClipOutOfRange: return "ClipOutOfRange";
        case ErrorCode::PiOutOfRange: return "PiOutOfRange";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NameMismatch: return "NameMismatch";
        case ErrorCode::BadSpec: return "BadSpec";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::BadVersion: return "BadVersion";
        case ErrorCode::HeaderParse: return "HeaderParse";
        case ErrorCode::TruncatedData: return "TruncatedData";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::Truncated: return "Truncated";
        case ErrorCode::IndexOutOfGroup: return "IndexOutOfGroup";
        case ErrorCode::NonMonotonicOutlierIndices: return "NonMonotonicOutlierIndices";
        case ErrorCode::InvariantViolation: return "InvariantViolation";
        case ErrorCode::CorruptQuantizedTensor: return "CorruptQuantizedTensor";
    }
    return "Unknown";
}

/// Every failure in the library is reported as an adpq::Error carrying a
/// machine-readable code. what() is "<Code>: <detail>".
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
    throw Error(code, detail);
}

} // namespace adpq

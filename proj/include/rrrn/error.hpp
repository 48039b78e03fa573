#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rrrn {

enum class ErrorCode {
    MissingFile,
    MalformedLine,
    DuplicateSampleId,
    UnmappedRecordPresent,
    SizeMismatch,
    EstimatorFailure,
    FlowTooSmall,
    InvalidOrdering,
    FrameIndexOutOfRange,
    DegenerateLandmarks,
    RatioOutOfRange,
    MissingLandmarks,
    ShapeMismatch,
    SingularDegree,
    LabelOutOfRange,
    EmptyMatrix,
    EmptyManifest,
    SingleSubject,
    CacheMiss,
    DivergedLoss,
    InvalidConfig,
    IoError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace rrrn

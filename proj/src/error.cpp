#include "rrrn/error.hpp"

namespace rrrn {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::MissingFile: return "MissingFile";
        case ErrorCode::MalformedLine: return "MalformedLine";
        case ErrorCode::DuplicateSampleId: return "DuplicateSampleId";
        case ErrorCode::UnmappedRecordPresent: return "UnmappedRecordPresent";
        case ErrorCode::SizeMismatch: return "SizeMismatch";
        case ErrorCode::EstimatorFailure: return "EstimatorFailure";
        case ErrorCode::FlowTooSmall: return "FlowTooSmall";
        case ErrorCode::InvalidOrdering: return "InvalidOrdering";
        case ErrorCode::FrameIndexOutOfRange: return "FrameIndexOutOfRange";
        case ErrorCode::DegenerateLandmarks: return "DegenerateLandmarks";
        case ErrorCode::RatioOutOfRange: return "RatioOutOfRange";
        case ErrorCode::MissingLandmarks: return "MissingLandmarks";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::SingularDegree: return "SingularDegree";
        case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
        case ErrorCode::EmptyMatrix: return "EmptyMatrix";
        case ErrorCode::EmptyManifest: return "EmptyManifest";
        case ErrorCode::SingleSubject: return "SingleSubject";
        case ErrorCode::CacheMiss: return "CacheMiss";
        case ErrorCode::DivergedLoss: return "DivergedLoss";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace rrrn

#include "dendseg/error.hpp"

namespace dendseg {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::SizeMismatch:            return "SizeMismatch";
        case ErrorCode::BadMeta:                 return "BadMeta";
        case ErrorCode::IoFailure:               return "IoFailure";
        case ErrorCode::VersionUnknown:          return "VersionUnknown";
        case ErrorCode::ManifestMismatch:        return "ManifestMismatch";
        case ErrorCode::IndexOutOfRange:         return "IndexOutOfRange";
        case ErrorCode::ShapeMismatch:           return "ShapeMismatch";
        case ErrorCode::EmptyOutput:             return "EmptyOutput";
        case ErrorCode::NonBinaryTarget:         return "NonBinaryTarget";
        case ErrorCode::NotScalar:               return "NotScalar";
        case ErrorCode::DetachedTensor:          return "DetachedTensor";
        case ErrorCode::MissingGrad:             return "MissingGrad";
        case ErrorCode::NonFinite:               return "NonFinite";
        case ErrorCode::ConfigInvalid:           return "ConfigInvalid";
        case ErrorCode::IndivisibleInput:        return "IndivisibleInput";
        case ErrorCode::NonFiniteLoss:           return "NonFiniteLoss";
        case ErrorCode::ArchitectureMismatch:    return "ArchitectureMismatch";
        case ErrorCode::FrozenHyperparamChanged: return "FrozenHyperparamChanged";
        case ErrorCode::PatchTooLarge:           return "PatchTooLarge";
        case ErrorCode::GridMismatch:            return "GridMismatch";
        case ErrorCode::EmptyDataset:            return "EmptyDataset";
        case ErrorCode::BadFractions:            return "BadFractions";
        case ErrorCode::InconsistentState:       return "InconsistentState";
        case ErrorCode::WrongRungBoundary:       return "WrongRungBoundary";
        case ErrorCode::AllTrialsFailed:         return "AllTrialsFailed";
        case ErrorCode::DegenerateVolume:        return "DegenerateVolume";
        case ErrorCode::SpecInvalid:             return "SpecInvalid";
        case ErrorCode::Usage:                   return "Usage";
    }
    return "Unknown";
}

bool is_io_error(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::SizeMismatch:
        case ErrorCode::BadMeta:
        case ErrorCode::IoFailure:
        case ErrorCode::VersionUnknown:
        case ErrorCode::ManifestMismatch:
        case ErrorCode::Usage:
            return true;
        default:
            return false;
    }
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

} // namespace dendseg

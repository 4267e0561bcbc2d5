#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dendseg {

enum class ErrorCode {
    // volume and checkpoint I/O
    SizeMismatch,
    BadMeta,
    IoFailure,
    VersionUnknown,
    ManifestMismatch,
    // shapes and indexing
    IndexOutOfRange,
    ShapeMismatch,
    EmptyOutput,
    // autograd
    NonBinaryTarget,
    NotScalar,
    DetachedTensor,
    MissingGrad,
    NonFinite,
    // models and training
    ConfigInvalid,
    IndivisibleInput,
    NonFiniteLoss,
    ArchitectureMismatch,
    FrozenHyperparamChanged,
    // patching and datasets
    PatchTooLarge,
    GridMismatch,
    EmptyDataset,
    BadFractions,
    // scheduler
    InconsistentState,
    WrongRungBoundary,
    AllTrialsFailed,
    // baselines and generator
    DegenerateVolume,
    SpecInvalid,
    // command line
    Usage,
};

[[nodiscard]] std::string_view to_string(ErrorCode code) noexcept;

/// True for errors caused by files or arguments rather than by the data itself.
/// The command line maps these to exit code 2.
[[nodiscard]] bool is_io_error(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail);

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& detail);

} // namespace dendseg

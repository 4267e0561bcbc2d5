#pragma once

#include "dendseg/volumeio.hpp"

#include <vector>

namespace dendseg {

struct PatchOrigin {
    int x = 0;
    int y = 0;
    int z = 0;
    friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

/// Overlapping tiling of a volume. Origins run z-major like voxels.
struct PatchGrid {
    Dims3 volume;
    Dims3 patch;
    Dims3 overlap;
    std::vector<int> xs, ys, zs;

    [[nodiscard]] std::size_t size() const noexcept { return xs.size() * ys.size() * zs.size(); }
    [[nodiscard]] PatchOrigin origin(std::size_t i) const;
    [[nodiscard]] std::vector<PatchOrigin> origins() const;
};

/// 0, s, 2s, ... with s = patch - overlap; the last origin is clamped to
/// dim - patch and duplicates dropped.
[[nodiscard]] std::vector<int> axis_origins(int dim, int patch, int overlap);

/// Throws PatchTooLarge when a patch exceeds the volume and ConfigInvalid for
/// an overlap outside [0, patch).
[[nodiscard]] PatchGrid plan_patches(Dims3 volume, Dims3 patch, Dims3 overlap);

template <typename T>
[[nodiscard]] Array3<T> crop(const Array3<T>& volume, PatchOrigin origin, Dims3 size);

/// Throws GridMismatch when the volume is not the one the grid was planned for.
template <typename T>
[[nodiscard]] std::vector<Array3<T>> extract_patches(const Array3<T>& volume, const PatchGrid& grid);

/// Accumulates per-patch logits, averages where patches overlap, and
/// thresholds sigma(mean) at 0.5.
class Stitcher {
public:
    explicit Stitcher(PatchGrid grid);

    /// Throws GridMismatch for a bad index or patch size.
    void add(std::size_t patch_index, const FloatVolume& logits);
    [[nodiscard]] FloatVolume mean_logits() const;
    /// Throws GridMismatch while any voxel is still uncovered.
    [[nodiscard]] LabelVolume labels() const;

private:
    PatchGrid grid_;
    std::vector<double> sum_;
    std::vector<std::uint32_t> count_;
};

[[nodiscard]] LabelVolume stitch(const std::vector<FloatVolume>& logit_patches, const PatchGrid& grid, Dims3 volume_dims);

} // namespace dendseg

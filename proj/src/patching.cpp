#include "dendseg/patching.hpp"

#include <cmath>
#include <string>

namespace dendseg {

namespace {

std::string dims_string(Dims3 d) {
    return std::to_string(d.width) + "x" + std::to_string(d.height) + "x" + std::to_string(d.depth);
}

} // namespace

std::vector<int> axis_origins(int dim, int patch, int overlap) {
    if (patch < 1) fail(ErrorCode::ConfigInvalid, "patch extent must be >= 1");
    if (patch > dim)
        fail(ErrorCode::PatchTooLarge, "patch extent " + std::to_string(patch) + " exceeds volume extent " + std::to_string(dim));
    if (overlap < 0 || overlap >= patch)
        fail(ErrorCode::ConfigInvalid, "overlap " + std::to_string(overlap) + " must lie in [0, " + std::to_string(patch) + ")");
    const int stride = patch - overlap;
    std::vector<int> out;
    for (int o = 0;; o += stride) {
        if (o + patch >= dim) {
            const int last = dim - patch;
            if (out.empty() || out.back() != last) out.push_back(last);
            break;
        }
        out.push_back(o);
    }
    return out;
}

PatchGrid plan_patches(Dims3 volume, Dims3 patch, Dims3 overlap) {
    if (!volume.valid()) fail(ErrorCode::ShapeMismatch, "volume dimensions must be >= 1");
    PatchGrid g{volume, patch, overlap, {}, {}, {}};
    g.xs = axis_origins(volume.width, patch.width, overlap.width);
    g.ys = axis_origins(volume.height, patch.height, overlap.height);
    g.zs = axis_origins(volume.depth, patch.depth, overlap.depth);
    return g;
}

PatchOrigin PatchGrid::origin(std::size_t i) const {
    if (i >= size()) fail(ErrorCode::GridMismatch, "patch index " + std::to_string(i) + " out of range");
    const std::size_t ix = i % xs.size();
    const std::size_t iy = (i / xs.size()) % ys.size();
    const std::size_t iz = i / (xs.size() * ys.size());
    return {xs[ix], ys[iy], zs[iz]};
}

std::vector<PatchOrigin> PatchGrid::origins() const {
    std::vector<PatchOrigin> out;
    out.reserve(size());
    for (int z : zs)
        for (int y : ys)
            for (int x : xs) out.push_back({x, y, z});
    return out;
}

template <typename T>
Array3<T> crop(const Array3<T>& volume, PatchOrigin o, Dims3 size) {
    const Dims3& d = volume.dims();
    if (o.x < 0 || o.y < 0 || o.z < 0 || o.x + size.width > d.width || o.y + size.height > d.height ||
        o.z + size.depth > d.depth)
        fail(ErrorCode::IndexOutOfRange, "crop " + dims_string(size) + " leaves the volume " + dims_string(d));
    Array3<T> out(size);
    auto dst = out.data();
    std::size_t k = 0;
    for (int z = 0; z < size.depth; ++z)
        for (int y = 0; y < size.height; ++y) {
            const T* row = &volume.at(o.x, o.y + y, o.z + z);
            for (int x = 0; x < size.width; ++x) dst[k++] = row[x];
        }
    return out;
}

template <typename T>
std::vector<Array3<T>> extract_patches(const Array3<T>& volume, const PatchGrid& grid) {
    if (volume.dims() != grid.volume)
        fail(ErrorCode::GridMismatch, "grid planned for " + dims_string(grid.volume) + ", volume is " + dims_string(volume.dims()));
    std::vector<Array3<T>> out;
    out.reserve(grid.size());
    for (const auto& o : grid.origins()) out.push_back(crop(volume, o, grid.patch));
    return out;
}

Stitcher::Stitcher(PatchGrid grid)
    : grid_(std::move(grid)), sum_(grid_.volume.voxel_count(), 0.0), count_(grid_.volume.voxel_count(), 0) {}

void Stitcher::add(std::size_t patch_index, const FloatVolume& logits) {
    if (logits.dims() != grid_.patch)
        fail(ErrorCode::GridMismatch, "patch is " + dims_string(logits.dims()) + ", grid expects " + dims_string(grid_.patch));
    const PatchOrigin o = grid_.origin(patch_index);
    const auto src = logits.data();
    std::size_t k = 0;
    for (int z = 0; z < grid_.patch.depth; ++z)
        for (int y = 0; y < grid_.patch.height; ++y) {
            const std::size_t base = voxel_offset(grid_.volume, o.x, o.y + y, o.z + z);
            for (int x = 0; x < grid_.patch.width; ++x, ++k) {
                sum_[base + static_cast<std::size_t>(x)] += static_cast<double>(src[k]);
                count_[base + static_cast<std::size_t>(x)] += 1;
            }
        }
}

FloatVolume Stitcher::mean_logits() const {
    FloatVolume out(grid_.volume);
    auto dst = out.data();
    for (std::size_t i = 0; i < sum_.size(); ++i) {
        if (count_[i] == 0) fail(ErrorCode::GridMismatch, "voxel " + std::to_string(i) + " is not covered by any patch");
        dst[i] = static_cast<float>(sum_[i] / count_[i]);
    }
    return out;
}

LabelVolume Stitcher::labels() const {
    std::vector<std::uint8_t> out(sum_.size());
    for (std::size_t i = 0; i < sum_.size(); ++i) {
        if (count_[i] == 0) fail(ErrorCode::GridMismatch, "voxel " + std::to_string(i) + " is not covered by any patch");
        const double mean = sum_[i] / count_[i];
        out[i] = 1.0 / (1.0 + std::exp(-mean)) >= 0.5 ? 1 : 0;
    }
    return LabelVolume(grid_.volume, std::move(out));
}

LabelVolume stitch(const std::vector<FloatVolume>& logit_patches, const PatchGrid& grid, Dims3 volume_dims) {
    if (volume_dims != grid.volume)
        fail(ErrorCode::GridMismatch, "grid planned for " + dims_string(grid.volume) + ", target is " + dims_string(volume_dims));
    if (logit_patches.size() != grid.size())
        fail(ErrorCode::GridMismatch, std::to_string(logit_patches.size()) + " patches for a grid of " + std::to_string(grid.size()));
    Stitcher s(grid);
    for (std::size_t i = 0; i < logit_patches.size(); ++i) s.add(i, logit_patches[i]);
    return s.labels();
}

template Array3<float> crop<float>(const Array3<float>&, PatchOrigin, Dims3);
template Array3<std::uint8_t> crop<std::uint8_t>(const Array3<std::uint8_t>&, PatchOrigin, Dims3);
template std::vector<Array3<float>> extract_patches<float>(const Array3<float>&, const PatchGrid&);
template std::vector<Array3<std::uint8_t>> extract_patches<std::uint8_t>(const Array3<std::uint8_t>&, const PatchGrid&);

} // namespace dendseg

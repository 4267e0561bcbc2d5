#pragma once

#include "dendseg/error.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

namespace dendseg {

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

struct Dims3 {
    int width = 0;
    int height = 0;
    int depth = 0;

    [[nodiscard]] constexpr std::size_t voxel_count() const noexcept {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height) *
               static_cast<std::size_t>(depth);
    }
    [[nodiscard]] constexpr bool valid() const noexcept {
        return width >= 1 && height >= 1 && depth >= 1;
    }
    [[nodiscard]] constexpr int axis(int a) const noexcept {
        return a == 0 ? width : (a == 1 ? height : depth);
    }
    friend constexpr bool operator==(const Dims3&, const Dims3&) = default;
};

/// Flat offset of voxel (x, y, z): z-major, then rows, then columns.
[[nodiscard]] constexpr std::size_t voxel_offset(const Dims3& d, int x, int y, int z) noexcept {
    return (static_cast<std::size_t>(z) * static_cast<std::size_t>(d.height) +
            static_cast<std::size_t>(y)) * static_cast<std::size_t>(d.width) +
           static_cast<std::size_t>(x);
}

/// Dense 3D array in canonical voxel order.
template <typename T>
class Array3 {
public:
    Array3() = default;
    explicit Array3(Dims3 dims, T fill = T{}) : dims_(checked(dims)), data_(dims.voxel_count(), fill) {}
    Array3(Dims3 dims, std::vector<T> data) : dims_(checked(dims)), data_(std::move(data)) {
        if (data_.size() != dims_.voxel_count())
            fail(ErrorCode::SizeMismatch, "array buffer length does not match dimensions");
    }

    [[nodiscard]] const Dims3& dims() const noexcept { return dims_; }
    [[nodiscard]] int width() const noexcept { return dims_.width; }
    [[nodiscard]] int height() const noexcept { return dims_.height; }
    [[nodiscard]] int depth() const noexcept { return dims_.depth; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] T& at(int x, int y, int z) noexcept { return data_[voxel_offset(dims_, x, y, z)]; }
    [[nodiscard]] const T& at(int x, int y, int z) const noexcept {
        return data_[voxel_offset(dims_, x, y, z)];
    }

    [[nodiscard]] std::span<T> data() noexcept { return data_; }
    [[nodiscard]] std::span<const T> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<T>& storage() const noexcept { return data_; }

    friend bool operator==(const Array3&, const Array3&) = default;

private:
    static Dims3 checked(Dims3 d) {
        if (!d.valid()) fail(ErrorCode::ShapeMismatch, "volume dimensions must be >= 1");
        return d;
    }

    Dims3 dims_{};
    std::vector<T> data_;
};

using FloatVolume = Array3<float>;

// ---------------------------------------------------------------------------
// Volumes
// ---------------------------------------------------------------------------

enum class DType : std::uint8_t { u8, u16, f32 };

[[nodiscard]] std::size_t dtype_size(DType dt) noexcept;
[[nodiscard]] std::string_view to_string(DType dt) noexcept;
[[nodiscard]] std::optional<DType> parse_dtype(std::string_view s) noexcept;

struct VolumeMeta {
    Dims3 dims;
    DType dtype = DType::u8;
};

/// Grayscale reconstruction volume. Keeps its on-disk sample type so that a
/// save/load round trip is bit-exact.
class GrayVolume {
public:
    using Buffer = std::variant<std::vector<std::uint8_t>, std::vector<std::uint16_t>, std::vector<float>>;

    GrayVolume(Dims3 dims, Buffer data);

    [[nodiscard]] const Dims3& dims() const noexcept { return dims_; }
    [[nodiscard]] DType dtype() const noexcept;
    [[nodiscard]] const Buffer& buffer() const noexcept { return data_; }

    /// Stored sample value, no scaling.
    [[nodiscard]] double value(std::size_t offset) const;
    [[nodiscard]] double value(int x, int y, int z) const { return value(voxel_offset(dims_, x, y, z)); }

    /// Network input scaling: u8 / 255, u16 / 65535, f32 unchanged.
    [[nodiscard]] FloatVolume normalized() const;

    friend bool operator==(const GrayVolume&, const GrayVolume&) = default;

private:
    Dims3 dims_;
    Buffer data_;
};

/// Binary dendrite (1) / background (0) volume.
class LabelVolume {
public:
    explicit LabelVolume(Dims3 dims);
    LabelVolume(Dims3 dims, std::vector<std::uint8_t> data);

    [[nodiscard]] const Dims3& dims() const noexcept { return labels_.dims(); }
    [[nodiscard]] std::uint8_t at(int x, int y, int z) const noexcept { return labels_.at(x, y, z); }
    void set(int x, int y, int z, bool foreground) noexcept { labels_.at(x, y, z) = foreground ? 1 : 0; }
    [[nodiscard]] std::span<const std::uint8_t> data() const noexcept { return labels_.data(); }
    [[nodiscard]] const Array3<std::uint8_t>& array() const noexcept { return labels_; }
    [[nodiscard]] std::size_t foreground_count() const noexcept;

    friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

private:
    Array3<std::uint8_t> labels_;
};

// ---------------------------------------------------------------------------
// Files: <name>.raw (little-endian samples) + <name>.json sidecar
// ---------------------------------------------------------------------------

struct VolumePaths {
    std::filesystem::path raw;
    std::filesystem::path meta;
};

/// "<base>.raw" / "<base>.json"; a trailing .raw or .json on base is stripped.
[[nodiscard]] VolumePaths volume_paths(const std::filesystem::path& base);

[[nodiscard]] VolumeMeta read_meta(const std::filesystem::path& meta_path);
[[nodiscard]] GrayVolume load_volume(const std::filesystem::path& raw_path, const std::filesystem::path& meta_path);
void save_volume(const GrayVolume& volume, const std::filesystem::path& raw_path,
                 const std::filesystem::path& meta_path);

/// Labels are stored as u8 volumes.
[[nodiscard]] LabelVolume load_labels(const std::filesystem::path& raw_path, const std::filesystem::path& meta_path);
void save_labels(const LabelVolume& labels, const std::filesystem::path& raw_path,
                 const std::filesystem::path& meta_path);

// ---------------------------------------------------------------------------
// Planes and overlays
// ---------------------------------------------------------------------------

enum class PlaneAxis : std::uint8_t { xy, xz };

[[nodiscard]] std::optional<PlaneAxis> parse_axis(std::string_view s) noexcept;

template <typename T>
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    [[nodiscard]] const T& at(int x, int y) const noexcept {
        return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
    }
    [[nodiscard]] T& at(int x, int y) noexcept {
        return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
    }
    friend bool operator==(const Plane&, const Plane&) = default;
};

using Slice = Plane<std::uint8_t>;

/// xy at z=index is the z-slice (width x height); xz at y=index is width x depth.
[[nodiscard]] Plane<double> extract_plane(const GrayVolume& volume, PlaneAxis axis, int index);
[[nodiscard]] Slice extract_plane(const LabelVolume& volume, PlaneAxis axis, int index);

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kTruePositiveColor{255, 255, 255};
inline constexpr Rgb kTrueNegativeColor{0, 0, 0};
inline constexpr Rgb kFalsePositiveColor{0, 255, 0};
inline constexpr Rgb kFalseNegativeColor{255, 105, 180};

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels; // interleaved RGB, row-major

    [[nodiscard]] Rgb at(int x, int y) const noexcept;
    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// TP white, TN black, FP green, FN pink.
[[nodiscard]] RgbImage render_overlay(const LabelVolume& pred, const LabelVolume& truth, PlaneAxis axis, int index);
[[nodiscard]] RgbImage render_overlay(const Slice& pred, const Slice& truth);

void write_ppm(const RgbImage& image, const std::filesystem::path& path);
[[nodiscard]] RgbImage read_ppm(const std::filesystem::path& path);

} // namespace dendseg

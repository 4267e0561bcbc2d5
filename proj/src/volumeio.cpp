#include "dendseg/volumeio.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dendseg {

namespace {

using nlohmann::json;

template <typename T>
void to_little_endian_bytes(std::span<const T> values, std::vector<char>& out) {
    out.resize(values.size_bytes());
    std::memcpy(out.data(), values.data(), values.size_bytes());
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        for (std::size_t i = 0; i < out.size(); i += sizeof(T)) std::reverse(out.begin() + i, out.begin() + i + sizeof(T));
    }
}

template <typename T>
std::vector<T> from_little_endian_bytes(const std::vector<char>& bytes) {
    std::vector<T> values(bytes.size() / sizeof(T));
    std::vector<char> copy = bytes;
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        for (std::size_t i = 0; i < copy.size(); i += sizeof(T)) std::reverse(copy.begin() + i, copy.begin() + i + sizeof(T));
    }
    std::memcpy(values.data(), copy.data(), values.size() * sizeof(T));
    return values;
}

std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::IoFailure, "write failed for " + path.string());
}

void write_meta(const VolumeMeta& meta, const std::filesystem::path& path) {
    json j = {{"width", meta.dims.width},
              {"height", meta.dims.height},
              {"depth", meta.dims.depth},
              {"dtype", std::string(to_string(meta.dtype))}};
    const std::string text = j.dump() + "\n";
    write_file(path, std::span(text.data(), text.size()));
}

} // namespace

// ---------------------------------------------------------------------------
// DType
// ---------------------------------------------------------------------------

std::size_t dtype_size(DType dt) noexcept {
    switch (dt) {
        case DType::u8:  return 1;
        case DType::u16: return 2;
        case DType::f32: return 4;
    }
    return 0;
}

std::string_view to_string(DType dt) noexcept {
    switch (dt) {
        case DType::u8:  return "u8";
        case DType::u16: return "u16";
        case DType::f32: return "f32";
    }
    return "";
}

std::optional<DType> parse_dtype(std::string_view s) noexcept {
    if (s == "u8") return DType::u8;
    if (s == "u16") return DType::u16;
    if (s == "f32") return DType::f32;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// GrayVolume / LabelVolume
// ---------------------------------------------------------------------------

GrayVolume::GrayVolume(Dims3 dims, Buffer data) : dims_(dims), data_(std::move(data)) {
    if (!dims_.valid()) fail(ErrorCode::ShapeMismatch, "volume dimensions must be >= 1");
    const std::size_t n = std::visit([](const auto& v) { return v.size(); }, data_);
    if (n != dims_.voxel_count())
        fail(ErrorCode::SizeMismatch, "buffer holds " + std::to_string(n) + " samples, expected " +
                                          std::to_string(dims_.voxel_count()));
    if (const auto* f = std::get_if<std::vector<float>>(&data_)) {
        if (!std::all_of(f->begin(), f->end(), [](float v) { return std::isfinite(v); }))
            fail(ErrorCode::NonFinite, "f32 volume contains NaN or Inf");
    }
}

DType GrayVolume::dtype() const noexcept {
    switch (data_.index()) {
        case 0: return DType::u8;
        case 1: return DType::u16;
        default: return DType::f32;
    }
}

double GrayVolume::value(std::size_t offset) const {
    return std::visit([offset](const auto& v) { return static_cast<double>(v.at(offset)); }, data_);
}

FloatVolume GrayVolume::normalized() const {
    std::vector<float> out(dims_.voxel_count());
    std::visit(
        [&out](const auto& v) {
            using T = typename std::decay_t<decltype(v)>::value_type;
            for (std::size_t i = 0; i < v.size(); ++i) {
                if constexpr (std::is_same_v<T, std::uint8_t>)
                    out[i] = static_cast<float>(v[i]) / 255.0f;
                else if constexpr (std::is_same_v<T, std::uint16_t>)
                    out[i] = static_cast<float>(v[i]) / 65535.0f;
                else
                    out[i] = v[i];
            }
        },
        data_);
    return FloatVolume(dims_, std::move(out));
}

LabelVolume::LabelVolume(Dims3 dims) : labels_(dims, 0) {}

LabelVolume::LabelVolume(Dims3 dims, std::vector<std::uint8_t> data) : labels_(dims, std::move(data)) {
    for (std::uint8_t v : labels_.data())
        if (v > 1) fail(ErrorCode::NonBinaryTarget, "label volume values must be 0 or 1");
}

std::size_t LabelVolume::foreground_count() const noexcept {
    return static_cast<std::size_t>(std::count(labels_.data().begin(), labels_.data().end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

VolumePaths volume_paths(const std::filesystem::path& base) {
    std::filesystem::path stem = base;
    if (stem.extension() == ".raw" || stem.extension() == ".json") stem.replace_extension();
    return {std::filesystem::path(stem.string() + ".raw"), std::filesystem::path(stem.string() + ".json")};
}

VolumeMeta read_meta(const std::filesystem::path& meta_path) {
    const std::vector<char> bytes = read_file(meta_path);
    json j;
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        fail(ErrorCode::BadMeta, meta_path.string() + ": " + e.what());
    }
    VolumeMeta meta;
    auto dim = [&](const char* key) {
        if (!j.is_object() || !j.contains(key) || !j[key].is_number_integer())
            fail(ErrorCode::BadMeta, meta_path.string() + ": missing or non-integer '" + key + "'");
        const auto v = j[key].get<long long>();
        if (v < 1 || v > (1LL << 30)) fail(ErrorCode::BadMeta, meta_path.string() + ": '" + key + "' out of range");
        return static_cast<int>(v);
    };
    meta.dims = {dim("width"), dim("height"), dim("depth")};
    if (!j.contains("dtype") || !j["dtype"].is_string())
        fail(ErrorCode::BadMeta, meta_path.string() + ": missing 'dtype'");
    const auto dt = parse_dtype(j["dtype"].get<std::string>());
    if (!dt) fail(ErrorCode::BadMeta, meta_path.string() + ": dtype must be u8, u16 or f32");
    meta.dtype = *dt;
    return meta;
}

GrayVolume load_volume(const std::filesystem::path& raw_path, const std::filesystem::path& meta_path) {
    const VolumeMeta meta = read_meta(meta_path);
    const std::vector<char> bytes = read_file(raw_path);
    const std::size_t expected = meta.dims.voxel_count() * dtype_size(meta.dtype);
    if (bytes.size() != expected)
        fail(ErrorCode::SizeMismatch, raw_path.string() + " has " + std::to_string(bytes.size()) +
                                          " bytes, sidecar implies " + std::to_string(expected));
    switch (meta.dtype) {
        case DType::u8:  return GrayVolume(meta.dims, from_little_endian_bytes<std::uint8_t>(bytes));
        case DType::u16: return GrayVolume(meta.dims, from_little_endian_bytes<std::uint16_t>(bytes));
        case DType::f32: return GrayVolume(meta.dims, from_little_endian_bytes<float>(bytes));
    }
    fail(ErrorCode::BadMeta, "unreachable dtype");
}

void save_volume(const GrayVolume& volume, const std::filesystem::path& raw_path,
                 const std::filesystem::path& meta_path) {
    std::vector<char> bytes;
    std::visit([&bytes](const auto& v) { to_little_endian_bytes(std::span(v), bytes); }, volume.buffer());
    write_file(raw_path, bytes);
    write_meta({volume.dims(), volume.dtype()}, meta_path);
}

LabelVolume load_labels(const std::filesystem::path& raw_path, const std::filesystem::path& meta_path) {
    GrayVolume raw = load_volume(raw_path, meta_path);
    const auto* bytes = std::get_if<std::vector<std::uint8_t>>(&raw.buffer());
    if (!bytes) fail(ErrorCode::BadMeta, meta_path.string() + ": label volumes must be u8");
    try {
        return LabelVolume(raw.dims(), *bytes);
    } catch (const Error&) {
        fail(ErrorCode::BadMeta, raw_path.string() + ": label values must be 0 or 1");
    }
}

void save_labels(const LabelVolume& labels, const std::filesystem::path& raw_path,
                 const std::filesystem::path& meta_path) {
    save_volume(GrayVolume(labels.dims(), labels.array().storage()), raw_path, meta_path);
}

// ---------------------------------------------------------------------------
// Planes
// ---------------------------------------------------------------------------

std::optional<PlaneAxis> parse_axis(std::string_view s) noexcept {
    if (s == "xy") return PlaneAxis::xy;
    if (s == "xz") return PlaneAxis::xz;
    return std::nullopt;
}

namespace {

template <typename T, typename Get>
Plane<T> take_plane(const Dims3& d, PlaneAxis axis, int index, Get get) {
    const int limit = axis == PlaneAxis::xy ? d.depth : d.height;
    if (index < 0 || index >= limit)
        fail(ErrorCode::IndexOutOfRange, "plane index " + std::to_string(index) + " outside [0, " +
                                             std::to_string(limit) + ")");
    Plane<T> p;
    p.width = d.width;
    p.height = axis == PlaneAxis::xy ? d.height : d.depth;
    p.data.resize(static_cast<std::size_t>(p.width) * static_cast<std::size_t>(p.height));
    for (int r = 0; r < p.height; ++r)
        for (int x = 0; x < p.width; ++x)
            p.at(x, r) = axis == PlaneAxis::xy ? get(voxel_offset(d, x, r, index)) : get(voxel_offset(d, x, index, r));
    return p;
}

} // namespace

Plane<double> extract_plane(const GrayVolume& volume, PlaneAxis axis, int index) {
    return take_plane<double>(volume.dims(), axis, index, [&](std::size_t o) { return volume.value(o); });
}

Slice extract_plane(const LabelVolume& volume, PlaneAxis axis, int index) {
    const auto data = volume.data();
    return take_plane<std::uint8_t>(volume.dims(), axis, index, [&](std::size_t o) { return data[o]; });
}

// ---------------------------------------------------------------------------
// Overlays
// ---------------------------------------------------------------------------

Rgb RgbImage::at(int x, int y) const noexcept {
    const std::size_t o = 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x));
    return {pixels[o], pixels[o + 1], pixels[o + 2]};
}

RgbImage render_overlay(const Slice& pred, const Slice& truth) {
    if (pred.width != truth.width || pred.height != truth.height)
        fail(ErrorCode::ShapeMismatch, "overlay slices differ in size");
    RgbImage img{pred.width, pred.height, {}};
    img.pixels.reserve(pred.data.size() * 3);
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0;
        const bool t = truth.data[i] != 0;
        const Rgb& c = p ? (t ? kTruePositiveColor : kFalsePositiveColor)
                         : (t ? kFalseNegativeColor : kTrueNegativeColor);
        img.pixels.insert(img.pixels.end(), c.begin(), c.end());
    }
    return img;
}

RgbImage render_overlay(const LabelVolume& pred, const LabelVolume& truth, PlaneAxis axis, int index) {
    if (pred.dims() != truth.dims()) fail(ErrorCode::ShapeMismatch, "prediction and truth dimensions differ");
    return render_overlay(extract_plane(pred, axis, index), extract_plane(truth, axis, index));
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
    std::ostringstream header;
    header << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::string bytes = header.str();
    bytes.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
    write_file(path, std::span(bytes.data(), bytes.size()));
}

RgbImage read_ppm(const std::filesystem::path& path) {
    const std::vector<char> bytes = read_file(path);
    std::string text(bytes.begin(), bytes.end());
    std::istringstream in(text);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (!in || magic != "P6" || maxval != 255 || w < 1 || h < 1) fail(ErrorCode::BadMeta, path.string() + ": not a P6/255 image");
    in.get();
    const auto offset = static_cast<std::size_t>(in.tellg());
    const std::size_t n = 3 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (bytes.size() != offset + n) fail(ErrorCode::SizeMismatch, path.string() + ": truncated pixel data");
    RgbImage img{w, h, std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end())};
    return img;
}

} // namespace dendseg

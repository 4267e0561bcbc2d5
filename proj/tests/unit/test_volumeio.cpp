#include "doctest.h"

#include "../support/oracles.hpp"

#include "dendseg/error.hpp"
#include "dendseg/volumeio.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

using namespace dendseg;

namespace {

std::vector<char> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void write_meta(const std::filesystem::path& p, int w, int h, int d, const char* dtype) {
    std::ofstream(p) << R"({"width":)" << w << R"(,"height":)" << h << R"(,"depth":)" << d << R"(,"dtype":")" << dtype << "\"}";
}

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::Usage;
}

} // namespace

TEST_SUITE("volumeio") {

TEST_CASE("offset formula puts (2,1,0) of a 3x2x1 volume at byte 5") {
    oracle::TempDir dir("vio");
    write_bytes(dir / "v.raw", {0, 1, 2, 3, 4, 5});
    write_meta(dir / "v.json", 3, 2, 1, "u8");
    const GrayVolume v = load_volume(dir / "v.raw", dir / "v.json");
    CHECK(v.value(2, 1, 0) == 5.0);
    CHECK(voxel_offset(v.dims(), 2, 1, 0) == 5);
}

TEST_CASE("offset map is a bijection onto [0, WHD)") {
    const Dims3 d{5, 3, 4};
    std::vector<int> hits(d.voxel_count(), 0);
    for (int z = 0; z < d.depth; ++z)
        for (int y = 0; y < d.height; ++y)
            for (int x = 0; x < d.width; ++x) ++hits[voxel_offset(d, x, y, z)];
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
}

TEST_CASE("nine bytes for a 2x2x2 u8 volume is a size mismatch") {
    oracle::TempDir dir("vio");
    write_bytes(dir / "v.raw", std::vector<std::uint8_t>(9, 0));
    write_meta(dir / "v.json", 2, 2, 2, "u8");
    CHECK(code_of([&] { (void)load_volume(dir / "v.raw", dir / "v.json"); }) == ErrorCode::SizeMismatch);
}

TEST_CASE("bad sidecars are BadMeta") {
    oracle::TempDir dir("vio");
    write_bytes(dir / "v.raw", {0});
    std::ofstream(dir / "a.json") << "{not json";
    write_meta(dir / "b.json", 1, 1, 1, "i32");
    std::ofstream(dir / "c.json") << R"({"width":1,"height":1,"dtype":"u8"})";
    write_meta(dir / "d.json", 0, 1, 1, "u8");
    for (const char* m : {"a.json", "b.json", "c.json", "d.json"})
        CHECK(code_of([&] { (void)load_volume(dir / "v.raw", dir / m); }) == ErrorCode::BadMeta);
    CHECK(code_of([&] { (void)load_volume(dir / "missing.raw", dir / "missing.json"); }) == ErrorCode::IoFailure);
}

TEST_CASE("round trips are bit-exact for every dtype") {
    oracle::TempDir dir("vio");
    Rng rng(7);
    const Dims3 d{7, 5, 3};
    std::vector<std::uint8_t> u8(d.voxel_count());
    std::vector<std::uint16_t> u16(d.voxel_count());
    std::vector<float> f32(d.voxel_count());
    for (std::size_t i = 0; i < u8.size(); ++i) {
        u8[i] = static_cast<std::uint8_t>(rng());
        u16[i] = static_cast<std::uint16_t>(rng());
        f32[i] = static_cast<float>(uniform(rng, -1e6, 1e6));
    }
    for (const GrayVolume& v : {GrayVolume(d, u8), GrayVolume(d, u16), GrayVolume(d, f32)}) {
        save_volume(v, dir / "v.raw", dir / "v.json");
        const GrayVolume back = load_volume(dir / "v.raw", dir / "v.json");
        CHECK(back == v);
        const auto bytes = read_bytes(dir / "v.raw");
        save_volume(back, dir / "w.raw", dir / "w.json");
        CHECK(read_bytes(dir / "w.raw") == bytes);
        CHECK(read_bytes(dir / "w.json") == read_bytes(dir / "v.json"));
    }
}

TEST_CASE("f32 value 1.0 is stored as 00 00 80 3F") {
    oracle::TempDir dir("vio");
    save_volume(GrayVolume({2, 1, 1}, std::vector<float>{0.0f, 1.0f}), dir / "v.raw", dir / "v.json");
    const auto b = read_bytes(dir / "v.raw");
    REQUIRE(b.size() == 8);
    CHECK(std::vector<unsigned char>(b.begin() + 4, b.end()) == std::vector<unsigned char>{0x00, 0x00, 0x80, 0x3F});
}

TEST_CASE("empty dimensions are rejected at construction") {
    CHECK(code_of([] { GrayVolume({0, 2, 2}, std::vector<std::uint8_t>{}); }) == ErrorCode::ShapeMismatch);
    CHECK(code_of([] { GrayVolume({2, 2, 1}, std::vector<std::uint8_t>(3)); }) == ErrorCode::SizeMismatch);
    CHECK(code_of([] { GrayVolume({1, 1, 1}, std::vector<float>{std::numeric_limits<float>::quiet_NaN()}); }) == ErrorCode::NonFinite);
}

TEST_CASE("normalization divides u8 by 255 and u16 by 65535") {
    const FloatVolume a = GrayVolume({2, 1, 1}, std::vector<std::uint8_t>{0, 255}).normalized();
    CHECK(a.data()[0] == 0.0f);
    CHECK(a.data()[1] == 1.0f);
    const FloatVolume b = GrayVolume({1, 1, 1}, std::vector<std::uint16_t>{65535}).normalized();
    CHECK(b.data()[0] == 1.0f);
}

TEST_CASE("label files must hold 0/1 u8 samples") {
    oracle::TempDir dir("vio");
    write_bytes(dir / "l.raw", {0, 1, 2, 0});
    write_meta(dir / "l.json", 2, 2, 1, "u8");
    CHECK(code_of([&] { (void)load_labels(dir / "l.raw", dir / "l.json"); }) == ErrorCode::BadMeta);
    write_meta(dir / "m.json", 2, 1, 1, "u16");
    CHECK(code_of([&] { (void)load_labels(dir / "l.raw", dir / "m.json"); }) == ErrorCode::BadMeta);

    const LabelVolume lab({2, 2, 1}, {0, 1, 1, 0});
    save_labels(lab, dir / "ok.raw", dir / "ok.json");
    CHECK(load_labels(dir / "ok.raw", dir / "ok.json") == lab);
}

TEST_CASE("xy plane at z=1 of a 4x4x2 volume holds offsets 16..31") {
    std::vector<std::uint8_t> v(32);
    for (int i = 0; i < 32; ++i) v[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i);
    const auto p = extract_plane(GrayVolume({4, 4, 2}, v), PlaneAxis::xy, 1);
    REQUIRE(p.width == 4);
    REQUIRE(p.height == 4);
    for (int i = 0; i < 16; ++i) CHECK(p.data[static_cast<std::size_t>(i)] == 16 + i);
}

TEST_CASE("xz plane at y=0 of a 3x2x2 volume is the 3x2 image of (x,0,z)") {
    std::vector<std::uint8_t> v(12);
    for (int i = 0; i < 12; ++i) v[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i);
    const GrayVolume g({3, 2, 2}, v);
    const auto p = extract_plane(g, PlaneAxis::xz, 0);
    REQUIRE(p.width == 3);
    REQUIRE(p.height == 2);
    for (int z = 0; z < 2; ++z)
        for (int x = 0; x < 3; ++x) CHECK(p.at(x, z) == g.value(x, 0, z));
}

TEST_CASE("plane index past the depth is IndexOutOfRange") {
    const GrayVolume g({2, 2, 2}, std::vector<std::uint8_t>(8));
    CHECK(code_of([&] { (void)extract_plane(g, PlaneAxis::xy, 5); }) == ErrorCode::IndexOutOfRange);
    CHECK(code_of([&] { (void)extract_plane(g, PlaneAxis::xz, -1); }) == ErrorCode::IndexOutOfRange);
}

TEST_CASE("overlay colors follow the confusion partition") {
    const Slice ones{2, 2, {1, 1, 1, 1}}, zeros{2, 2, {0, 0, 0, 0}};
    const RgbImage tp = render_overlay(ones, ones), fp = render_overlay(ones, zeros);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            CHECK(tp.at(x, y) == kTruePositiveColor);
            CHECK(fp.at(x, y) == kFalsePositiveColor);
        }
    const Slice half{2, 2, {1, 1, 0, 0}}, other{2, 2, {0, 0, 1, 1}};
    const RgbImage img = render_overlay(half, other);
    CHECK(img.at(0, 0) == kFalsePositiveColor);
    CHECK(img.at(1, 0) == kFalsePositiveColor);
    CHECK(img.at(0, 1) == kFalseNegativeColor);
    CHECK(img.at(1, 1) == kFalseNegativeColor);
    CHECK(kFalseNegativeColor == Rgb{255, 105, 180});
}

TEST_CASE("PPM round trip") {
    oracle::TempDir dir("vio");
    Rng rng(3);
    const Slice a = oracle::random_slice(rng, 9, 5), b = oracle::random_slice(rng, 9, 5);
    const RgbImage img = render_overlay(a, b);
    write_ppm(img, dir / "o.ppm");
    CHECK(read_ppm(dir / "o.ppm") == img);
    const auto bytes = read_bytes(dir / "o.ppm");
    CHECK(std::string(bytes.begin(), bytes.begin() + 2) == "P6");
}

}

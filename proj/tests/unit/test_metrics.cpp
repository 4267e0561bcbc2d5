#include "doctest.h"

#include "../support/oracles.hpp"

#include "dendseg/error.hpp"
#include "dendseg/metrics.hpp"

#include <cmath>

using namespace dendseg;

namespace {

Slice square(int w, int h, int x0, int y0, int side) {
    Slice s{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w * h), 0)};
    for (int y = y0; y < y0 + side; ++y)
        for (int x = x0; x < x0 + side; ++x) s.at(x, y) = 1;
    return s;
}

Slice invert(Slice s) {
    for (auto& v : s.data) v = v ? 0 : 1;
    return s;
}

// Copies `s` into a larger canvas at offset (dx, dy).
Slice embed(const Slice& s, int w, int h, int dx, int dy) {
    Slice out{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w * h), 0)};
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) out.at(x + dx, y + dy) = s.at(x, y);
    return out;
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("accuracy examples") {
    const Slice t = square(4, 4, 1, 1, 2);
    CHECK(accuracy(t, t) == 1.0);
    CHECK(accuracy(invert(t), t) == 0.0);
    CHECK(accuracy(Slice{2, 2, {1, 0, 0, 0}}, Slice{2, 2, {1, 0, 0, 1}}) == 0.75);
}

TEST_CASE("iou examples") {
    const Slice a = square(4, 4, 0, 0, 2), b = square(4, 4, 2, 2, 2);
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, b) == 0.0);
    CHECK(iou(a, square(4, 4, 1, 0, 2)) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const Slice empty{3, 3, std::vector<std::uint8_t>(9, 0)};
    CHECK(iou(empty, empty) == 1.0);
}

TEST_CASE("mismatched shapes are rejected") {
    const Slice a = square(4, 4, 0, 0, 2), b = square(5, 4, 0, 0, 2);
    CHECK_THROWS_AS((void)accuracy(a, b), Error);
    CHECK_THROWS_AS((void)iou(a, b), Error);
    CHECK_THROWS_AS((void)bf1(a, b), Error);
    CHECK_THROWS_AS((void)bde(a, b), Error);
}

TEST_CASE("boundary pixel examples") {
    CHECK(boundary_pixels(Slice{3, 3, std::vector<std::uint8_t>(9, 0)}).empty());
    Slice one{5, 5, std::vector<std::uint8_t>(25, 0)};
    one.at(2, 3) = 1;
    CHECK(boundary_pixels(one) == std::vector<Pixel>{{2, 3}});
    const auto b = boundary_pixels(square(9, 9, 3, 3, 3));
    CHECK(b.size() == 8);
    CHECK(std::find(b.begin(), b.end(), Pixel{4, 4}) == b.end());
    // A full image is all boundary at the border only.
    CHECK(boundary_pixels(Slice{4, 4, std::vector<std::uint8_t>(16, 1)}).size() == 12);
}

TEST_CASE("bf1 examples") {
    const Slice t = square(16, 16, 4, 4, 5);
    CHECK(bf1(t, t) == 1.0);
    Slice a{20, 3, std::vector<std::uint8_t>(60, 0)}, b = a;
    a.at(2, 1) = 1;
    b.at(12, 1) = 1;
    CHECK(bf1(a, b) == 0.0);
    const Slice shifted = square(16, 16, 6, 4, 5);
    CHECK(bf1(t, shifted) == oracle::bf1(t, shifted, 4.0));
    const Slice empty{16, 16, std::vector<std::uint8_t>(256, 0)};
    CHECK(bf1(empty, empty) == 1.0);
    CHECK(bf1(t, empty) == 0.0);
}

TEST_CASE("bde examples") {
    const Slice t = square(16, 16, 4, 4, 5);
    CHECK(bde(t, t) == 0.0);
    Slice a{10, 6, std::vector<std::uint8_t>(60, 0)}, b = a;
    for (int y = 0; y < 6; ++y) {
        a.at(2, y) = 1;
        b.at(5, y) = 1;
    }
    CHECK(bde(a, b) == 3.0);
    Slice pred{3, 4, std::vector<std::uint8_t>(12, 0)};
    pred.at(1, 1) = 1;
    CHECK(bde(pred, Slice{3, 4, std::vector<std::uint8_t>(12, 0)}) == 5.0);
}

TEST_CASE("distance transform equals brute force") {
    Rng rng(11);
    for (int rep = 0; rep < 50; ++rep) {
        const int w = 1 + static_cast<int>(uniform_index(rng, 30)), h = 1 + static_cast<int>(uniform_index(rng, 30));
        std::vector<Pixel> sites;
        const std::size_t n = uniform_index(rng, 6);
        for (std::size_t i = 0; i < n; ++i)
            sites.push_back({static_cast<int>(uniform_index(rng, static_cast<std::size_t>(w))),
                             static_cast<int>(uniform_index(rng, static_cast<std::size_t>(h)))});
        const auto d = squared_distance_transform(w, h, sites);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                long long best = -1;
                for (const auto& s : sites) {
                    const long long v = 1LL * (x - s.x) * (x - s.x) + 1LL * (y - s.y) * (y - s.y);
                    if (best < 0 || v < best) best = v;
                }
                CHECK(d[static_cast<std::size_t>(y * w + x)] == best);
            }
    }
}

TEST_CASE("fast paths equal the all-pairs oracles exactly") {
    Rng rng(12);
    for (int rep = 0; rep < 300; ++rep) {
        const int w = 1 + static_cast<int>(uniform_index(rng, 40)), h = 1 + static_cast<int>(uniform_index(rng, 40));
        const Slice t = oracle::random_slice(rng, w, h);
        const Slice p = uniform_index(rng, 2) ? oracle::perturbed(t, rng) : oracle::random_slice(rng, w, h);
        CHECK(accuracy(p, t) == oracle::accuracy(p, t));
        CHECK(iou(p, t) == oracle::iou(p, t));
        for (DistanceMethod m : {DistanceMethod::transform, DistanceMethod::brute_force}) {
            CHECK(bf1(p, t, 4.0, m) == oracle::bf1(p, t, 4.0));
            CHECK(bde(p, t, m) == oracle::bde(p, t));
        }
        const auto b = boundary_pixels(p);
        const auto o = oracle::boundary(p);
        REQUIRE(b.size() == o.size());
        for (std::size_t i = 0; i < b.size(); ++i) CHECK((b[i].x == o[i].first && b[i].y == o[i].second));
    }
}

TEST_CASE("symmetric metrics and ranges") {
    Rng rng(13);
    for (int rep = 0; rep < 200; ++rep) {
        const Slice a = oracle::random_slice(rng, 24, 17), b = oracle::random_slice(rng, 24, 17);
        CHECK(iou(a, b) == iou(b, a));
        CHECK(accuracy(a, b) == accuracy(b, a));
        CHECK(bf1(a, b) == bf1(b, a));
        CHECK(bde(a, b) == bde(b, a));
        for (double v : {accuracy(a, b), iou(a, b), bf1(a, b)}) CHECK((v >= 0.0 && v <= 1.0));
        CHECK(bde(a, b) >= 0.0);
    }
}

TEST_CASE("adding false positives never raises IoU") {
    Rng rng(14);
    for (int rep = 0; rep < 50; ++rep) {
        const Slice t = oracle::random_slice(rng, 20, 20);
        Slice p = t;
        double last = iou(p, t);
        for (int step = 0; step < 40; ++step) {
            p.at(static_cast<int>(uniform_index(rng, 20)), static_cast<int>(uniform_index(rng, 20))) = 1;
            const double now = iou(p, t);
            CHECK(now <= last);
            last = now;
        }
    }
}

TEST_CASE("translating both masks leaves IoU, BF1 and BDE unchanged") {
    Rng rng(15);
    for (int rep = 0; rep < 50; ++rep) {
        const Slice a = oracle::random_slice(rng, 12, 12), b = oracle::random_slice(rng, 12, 12);
        if (boundary_pixels(a).empty() || boundary_pixels(b).empty()) continue;
        // Pad by one so the moved masks keep the same boundary.
        const Slice a0 = embed(a, 14, 14, 1, 1), b0 = embed(b, 14, 14, 1, 1);
        const int dx = static_cast<int>(uniform_index(rng, 10)), dy = static_cast<int>(uniform_index(rng, 10));
        const Slice a1 = embed(a, 24, 24, dx + 1, dy + 1), b1 = embed(b, 24, 24, dx + 1, dy + 1);
        CHECK(iou(a0, b0) == iou(a1, b1));
        CHECK(bf1(a0, b0) == bf1(a1, b1));
        CHECK(bde(a0, b0) == bde(a1, b1));
    }
}

TEST_CASE("volume evaluation") {
    Rng rng(16);
    std::vector<std::uint8_t> v(32 * 32 * 4);
    for (auto& x : v) x = uniform(rng, 0, 1) < 0.3 ? 1 : 0;
    const LabelVolume truth({32, 32, 4}, v);
    const MetricsReport same = evaluate(truth, truth);
    CHECK(same.slices.size() == 4);
    CHECK(same.aggregate.accuracy == 1.0);
    CHECK(same.aggregate.iou == 1.0);
    CHECK(same.aggregate.bf1 == 1.0);
    CHECK(same.aggregate.bde == 0.0);

    for (auto& x : v)
        if (uniform(rng, 0, 1) < 0.1) x = x ? 0 : 1;
    const LabelVolume pred({32, 32, 4}, v);
    const MetricsReport r = evaluate(pred, truth);
    double mean_iou = 0.0;
    for (int z = 0; z < 4; ++z) {
        const Slice ps = extract_plane(pred, PlaneAxis::xy, z), ts = extract_plane(truth, PlaneAxis::xy, z);
        const auto& s = r.slices[static_cast<std::size_t>(z)];
        CHECK(s.z == z);
        CHECK(s.accuracy == oracle::accuracy(ps, ts));
        CHECK(s.iou == oracle::iou(ps, ts));
        CHECK(s.bf1 == oracle::bf1(ps, ts, 4.0));
        CHECK(s.bde == oracle::bde(ps, ts));
        mean_iou += s.iou / 4.0;
    }
    CHECK(r.aggregate.iou == doctest::Approx(mean_iou).epsilon(1e-15));
    CHECK(mean_slice_iou(pred, truth) == doctest::Approx(mean_iou).epsilon(1e-15));
    CHECK(r.to_json()["slices"].size() == 4);
}

}

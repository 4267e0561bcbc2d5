#include "doctest.h"

#include "../support/oracles.hpp"

#include "dendseg/baselines.hpp"
#include "dendseg/error.hpp"
#include "dendseg/synthgen.hpp"

#include <cmath>
#include <deque>

using namespace dendseg;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::Usage;
}

// Mixture of two Gaussian intensity populations, clamped to u8.
GrayVolume bimodal(Rng& rng, Dims3 d) {
    const double lo = uniform(rng, 20, 120), hi = uniform(rng, 130, 240), p = uniform(rng, 0.1, 0.9);
    const double s = uniform(rng, 2, 30);
    std::vector<std::uint8_t> v(d.voxel_count());
    for (auto& x : v) x = static_cast<std::uint8_t>(std::clamp(std::lround((uniform(rng, 0, 1) < p ? lo : hi) + s * normal(rng)), 0L, 255L));
    return GrayVolume(d, std::move(v));
}

GrayVolume flip_intensity(const GrayVolume& g) {
    const auto& v = std::get<std::vector<std::uint8_t>>(g.buffer());
    std::vector<std::uint8_t> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<std::uint8_t>(255 - v[i]);
    return GrayVolume(g.dims(), std::move(out));
}

} // namespace

TEST_SUITE("baselines") {

TEST_CASE("Otsu threshold equals the exhaustive search") {
    Rng rng(41);
    for (int rep = 0; rep < 60; ++rep) {
        const GrayVolume g = uniform_index(rng, 2) ? bimodal(rng, {12, 10, 3}) : [&] {
            std::vector<std::uint8_t> v(360);
            const int lo = static_cast<int>(uniform_index(rng, 200));
            const int span = 1 + static_cast<int>(uniform_index(rng, 56));
            for (auto& x : v) x = static_cast<std::uint8_t>(lo + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(span))));
            return GrayVolume({12, 10, 3}, std::move(v));
        }();
        const Histogram h = intensity_histogram(g);
        const int expected = oracle::exhaustive_otsu(h);
        if (expected < 0) continue;
        CHECK(otsu_threshold(h) == expected);
    }
}

TEST_CASE("histogram bins for every dtype") {
    const GrayVolume a({3, 1, 1}, std::vector<std::uint16_t>{0, 255, 65535});
    CHECK(histogram_bin(a, 1) == 0);
    CHECK(histogram_bin(a, 2) == 255);
    const GrayVolume f({3, 1, 1}, std::vector<float>{-1.f, 0.5f, 2.f});
    CHECK(histogram_bin(f, 0) == 0);
    CHECK(histogram_bin(f, 1) == 128);
    CHECK(histogram_bin(f, 2) == 255);
}

TEST_CASE("two-level volume splits cleanly with dark voxels as dendrite") {
    std::vector<std::uint8_t> v(64);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i % 3 == 0) ? 20 : 200;
    const GrayVolume g({4, 4, 4}, v);
    const Histogram h = intensity_histogram(g);
    CHECK(otsu_threshold(h) == oracle::exhaustive_otsu(h));
    CHECK(otsu_threshold(h) == 20);
    const LabelVolume otsu = otsu_segment(g), km = kmeans2_segment(g, 100);
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(otsu.data()[i] == (v[i] == 20 ? 1 : 0));
        CHECK(km.data()[i] == otsu.data()[i]);
    }
    const KMeansResult r = kmeans2(g, 100);
    CHECK(r.low_centroid == 20.0);
    CHECK(r.high_centroid == 200.0);
}

TEST_CASE("constant volumes") {
    const GrayVolume g({3, 3, 2}, std::vector<std::uint8_t>(18, 77));
    CHECK(code_of([&] { (void)otsu_threshold(intensity_histogram(g)); }) == ErrorCode::DegenerateVolume);
    CHECK(code_of([&] { (void)kmeans2(g, 10); }) == ErrorCode::DegenerateVolume);
    CHECK(otsu_segment(g).foreground_count() == 0);
    CHECK(kmeans2_segment(g, 10).foreground_count() == 0);
}

TEST_CASE("k-means converges on 20/200 and its objective never rises") {
    std::vector<std::uint8_t> v;
    for (int i = 0; i < 50; ++i) v.push_back(20);
    for (int i = 0; i < 50; ++i) v.push_back(200);
    const KMeansResult r = kmeans2(GrayVolume({10, 10, 1}, v), 100);
    CHECK(r.low_centroid == 20.0);
    CHECK(r.high_centroid == 200.0);

    Rng rng(42);
    for (int rep = 0; rep < 40; ++rep) {
        const GrayVolume g = bimodal(rng, {10, 10, 4});
        const KMeansResult k = kmeans2(g, 100);
        for (std::size_t i = 1; i < k.objective.size(); ++i) CHECK(k.objective[i] <= k.objective[i - 1] + 1e-9 * k.objective[i - 1]);
        CHECK(k.low_centroid <= k.high_centroid);
        // Rerunning, or running from the converged state, changes nothing.
        CHECK(kmeans2_segment(g, 100, 1) == kmeans2_segment(g, 100, 2));
        CHECK(kmeans2_segment(g, k.iterations + 5) == kmeans2_segment(g, 100));
    }
}

TEST_CASE("flipping intensities flips the assignment") {
    Rng rng(43);
    for (int rep = 0; rep < 40; ++rep) {
        const GrayVolume g = bimodal(rng, {9, 7, 3});
        const GrayVolume f = flip_intensity(g);
        const LabelVolume a = otsu_segment(g), b = otsu_segment(f);
        const LabelVolume c = kmeans2_segment(g, 100), d = kmeans2_segment(f, 100);
        std::size_t otsu_same = 0, km_same = 0;
        for (std::size_t i = 0; i < a.data().size(); ++i) {
            otsu_same += a.data()[i] == b.data()[i];
            km_same += c.data()[i] == d.data()[i];
        }
        CHECK(otsu_same == 0);
        CHECK(km_same == 0);
    }
}

}

TEST_SUITE("synthgen") {

TEST_CASE("same seed gives identical volumes") {
    SynthSpec s;
    s.seed = 12;
    const auto a = generate(s), b = generate(s);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    s.seed = 13;
    CHECK_FALSE(generate(s).second == a.second);
}

TEST_CASE("without blur and noise the volume is two-valued and Otsu is exact") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SynthSpec s;
        s.blur_sigma = 0;
        s.noise_sigma = 0;
        s.seed = seed;
        const auto [gray, label] = generate(s);
        const Histogram h = intensity_histogram(gray);
        CHECK(std::count_if(h.begin(), h.end(), [](auto c) { return c > 0; }) == 2);
        CHECK(otsu_segment(gray) == label);
    }
}

TEST_CASE("dendrite voxels are darker on average") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        SynthSpec s;
        s.dims = {32, 32, 8};
        s.noise_sigma = 20;
        s.seed = seed;
        const auto [gray, label] = generate(s);
        double fg = 0, bg = 0;
        std::size_t nf = 0, nb = 0;
        for (std::size_t i = 0; i < label.data().size(); ++i) {
            (label.data()[i] ? fg : bg) += gray.value(i);
            (label.data()[i] ? nf : nb) += 1;
        }
        REQUIRE(nf > 0);
        CHECK(fg / static_cast<double>(nf) < bg / static_cast<double>(nb));
    }
}

TEST_CASE("foreground is a minority and one 26-connected component") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        SynthSpec s;
        s.seed = seed;
        const LabelVolume l = generate(s).second;
        const Dims3 d = l.dims();
        const double frac = static_cast<double>(l.foreground_count()) / static_cast<double>(d.voxel_count());
        CHECK(frac > 0.0);
        CHECK(frac < 0.5);

        std::vector<char> seen(d.voxel_count(), 0);
        std::size_t start = 0;
        while (!l.data()[start]) ++start;
        std::deque<std::size_t> q{start};
        seen[start] = 1;
        std::size_t reached = 0;
        while (!q.empty()) {
            const std::size_t i = q.front();
            q.pop_front();
            ++reached;
            const int x = static_cast<int>(i % static_cast<std::size_t>(d.width));
            const int y = static_cast<int>((i / static_cast<std::size_t>(d.width)) % static_cast<std::size_t>(d.height));
            const int z = static_cast<int>(i / (static_cast<std::size_t>(d.width) * static_cast<std::size_t>(d.height)));
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx, ny = y + dy, nz = z + dz;
                        if (nx < 0 || ny < 0 || nz < 0 || nx >= d.width || ny >= d.height || nz >= d.depth) continue;
                        const std::size_t j = voxel_offset(d, nx, ny, nz);
                        if (l.data()[j] && !seen[j]) {
                            seen[j] = 1;
                            q.push_back(j);
                        }
                    }
        }
        CHECK(reached == l.foreground_count());
    }
}

TEST_CASE("zero blur returns the input") {
    Rng rng(44);
    FloatVolume v({5, 4, 3});
    for (float& x : v.data()) x = static_cast<float>(uniform(rng, 0, 255));
    CHECK(gaussian_blur(v, 0.0) == v);
    const FloatVolume c({6, 6, 6}, 42.f);
    const FloatVolume blurred = gaussian_blur(c, 1.5);
    for (float x : blurred.data()) CHECK(x == doctest::Approx(42.f).epsilon(1e-6));
}

TEST_CASE("invalid specs and JSON round trip") {
    SynthSpec bad;
    bad.radius_min = 5;
    bad.radius_max = 4;
    CHECK(code_of([&] { validate(bad); }) == ErrorCode::SpecInvalid);
    SynthSpec neg;
    neg.noise_sigma = -1;
    CHECK(code_of([&] { validate(neg); }) == ErrorCode::SpecInvalid);
    SynthSpec s;
    s.primary_arms = 9;
    s.seed = 5;
    CHECK(to_json(synth_spec_from_json(to_json(s))) == to_json(s));
}

}

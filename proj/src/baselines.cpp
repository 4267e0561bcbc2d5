#include "dendseg/baselines.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <map>

namespace dendseg {

using boost::multiprecision::int256_t;

int histogram_bin(const GrayVolume& volume, std::size_t offset) {
    const double v = volume.value(offset);
    switch (volume.dtype()) {
    case DType::u8: return static_cast<int>(v);
    case DType::u16: return static_cast<int>(v) >> 8;
    case DType::f32: return static_cast<int>(std::clamp(std::floor(v * 256.0), 0.0, 255.0));
    }
    return 0;
}

Histogram intensity_histogram(const GrayVolume& volume) {
    Histogram h{};
    const std::size_t n = volume.dims().voxel_count();
    for (std::size_t i = 0; i < n; ++i) ++h[static_cast<std::size_t>(histogram_bin(volume, i))];
    return h;
}

int otsu_threshold(const Histogram& h) {
    int occupied = 0;
    for (auto c : h) occupied += c > 0 ? 1 : 0;
    if (occupied < 2) fail(ErrorCode::DegenerateVolume, "intensity histogram has a single occupied bin");

    int256_t n_total = 0, s_total = 0;
    for (int b = 0; b < 256; ++b) {
        n_total += h[static_cast<std::size_t>(b)];
        s_total += int256_t(h[static_cast<std::size_t>(b)]) * b;
    }
    int best_t = -1;
    int256_t best_num = 0, best_den = 1;
    int256_t n0 = 0, s0 = 0;
    for (int t = 0; t < 255; ++t) {
        n0 += h[static_cast<std::size_t>(t)];
        s0 += int256_t(h[static_cast<std::size_t>(t)]) * t;
        const int256_t n1 = n_total - n0, s1 = s_total - s0;
        if (n0 == 0 || n1 == 0) continue;
        const int256_t diff = s0 * n1 - s1 * n0;
        const int256_t num = diff * diff, den = n0 * n1;
        if (best_t < 0 || num * best_den > best_num * den) {
            best_t = t;
            best_num = num;
            best_den = den;
        }
    }
    return best_t;
}

LabelVolume otsu_segment(const GrayVolume& volume) {
    const Histogram h = intensity_histogram(volume);
    int t = -1;
    try {
        t = otsu_threshold(h);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateVolume) throw;
        return LabelVolume(volume.dims());
    }
    std::vector<std::uint8_t> out(volume.dims().voxel_count());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = histogram_bin(volume, i) <= t ? 1 : 0;
    return LabelVolume(volume.dims(), std::move(out));
}

namespace {

struct ValueCounts {
    std::vector<double> values; // ascending, distinct
    std::vector<double> counts;
};

ValueCounts distinct_values(const GrayVolume& volume) {
    std::map<double, std::size_t> m;
    const std::size_t n = volume.dims().voxel_count();
    for (std::size_t i = 0; i < n; ++i) ++m[volume.value(i)];
    ValueCounts vc;
    for (const auto& [v, c] : m) {
        vc.values.push_back(v);
        vc.counts.push_back(static_cast<double>(c));
    }
    return vc;
}

// Number of distinct values assigned to the low cluster (ties go low).
std::size_t split_point(const ValueCounts& vc, double c0, double c1) {
    std::size_t k = 0;
    while (k < vc.values.size() && std::abs(vc.values[k] - c0) <= std::abs(vc.values[k] - c1)) ++k;
    return k;
}

} // namespace

KMeansResult kmeans2(const GrayVolume& volume, int max_iters) {
    const ValueCounts vc = distinct_values(volume);
    if (vc.values.size() < 2) fail(ErrorCode::DegenerateVolume, "volume has a single intensity");
    KMeansResult r;
    r.low_centroid = vc.values.front();
    r.high_centroid = vc.values.back();
    std::size_t split = split_point(vc, r.low_centroid, r.high_centroid);
    for (int it = 1; it <= max_iters; ++it) {
        double s0 = 0, n0 = 0, s1 = 0, n1 = 0;
        for (std::size_t k = 0; k < vc.values.size(); ++k) {
            (k < split ? s0 : s1) += vc.values[k] * vc.counts[k];
            (k < split ? n0 : n1) += vc.counts[k];
        }
        r.low_centroid = s0 / n0;
        r.high_centroid = s1 / n1;
        double sse = 0.0;
        for (std::size_t k = 0; k < vc.values.size(); ++k) {
            const double d = vc.values[k] - (k < split ? r.low_centroid : r.high_centroid);
            sse += d * d * vc.counts[k];
        }
        r.objective.push_back(sse);
        r.iterations = it;
        const std::size_t next = split_point(vc, r.low_centroid, r.high_centroid);
        if (next == split) break;
        split = next;
    }
    return r;
}

LabelVolume kmeans2_segment(const GrayVolume& volume, int max_iters, std::uint64_t /*seed*/) {
    KMeansResult r;
    try {
        r = kmeans2(volume, max_iters);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateVolume) throw;
        return LabelVolume(volume.dims());
    }
    std::vector<std::uint8_t> out(volume.dims().voxel_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = volume.value(i);
        out[i] = std::abs(v - r.low_centroid) <= std::abs(v - r.high_centroid) ? 1 : 0;
    }
    return LabelVolume(volume.dims(), std::move(out));
}

} // namespace dendseg

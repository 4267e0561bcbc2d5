#pragma once

#include "dendseg/volumeio.hpp"

#include "json.hpp"

#include <cstddef>
#include <vector>

namespace dendseg {

struct ConfusionCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;

    [[nodiscard]] std::size_t total() const noexcept { return tp + fp + tn + fn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

[[nodiscard]] ConfusionCounts confusion(const Slice& pred, const Slice& truth);

[[nodiscard]] double accuracy(const Slice& pred, const Slice& truth);
/// Dendrite-class IoU; 1.0 when both masks are empty.
[[nodiscard]] double iou(const Slice& pred, const Slice& truth);

struct Pixel {
    int x = 0;
    int y = 0;
    friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Foreground pixels with a background 4-neighbour; outside the image counts
/// as background. Raster order.
[[nodiscard]] std::vector<Pixel> boundary_pixels(const Slice& mask);

/// How nearest-boundary distances are found. Both give identical results.
enum class DistanceMethod { transform, brute_force };

inline constexpr double kBoundaryTolerance = 4.0;

[[nodiscard]] double bf1(const Slice& pred, const Slice& truth, double tolerance = kBoundaryTolerance,
                         DistanceMethod method = DistanceMethod::transform);
[[nodiscard]] double bde(const Slice& pred, const Slice& truth, DistanceMethod method = DistanceMethod::transform);

/// Exact squared Euclidean distance from every pixel to the nearest set pixel,
/// row-major. Entries are -1 when the set is empty.
[[nodiscard]] std::vector<long long> squared_distance_transform(int width, int height, const std::vector<Pixel>& sites);

struct SliceMetrics {
    int z = 0;
    double accuracy = 0.0;
    double iou = 0.0;
    double bf1 = 0.0;
    double bde = 0.0;
};

struct MetricsReport {
    std::vector<SliceMetrics> slices;
    SliceMetrics aggregate; // unweighted mean over slices; z unused

    [[nodiscard]] nlohmann::json to_json() const;
};

[[nodiscard]] SliceMetrics slice_metrics(const Slice& pred, const Slice& truth,
                                         DistanceMethod method = DistanceMethod::transform);
[[nodiscard]] MetricsReport evaluate(const LabelVolume& pred, const LabelVolume& truth,
                                     DistanceMethod method = DistanceMethod::transform);

/// Mean per-slice IoU, without the boundary metrics.
[[nodiscard]] double mean_slice_iou(const LabelVolume& pred, const LabelVolume& truth);

} // namespace dendseg

#pragma once

#include "dendseg/volumeio.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace dendseg {

using Histogram = std::array<std::uint64_t, 256>;

/// Bin of a stored sample: u8 value, u16 value >> 8, f32 floor(v * 256)
/// clamped to [0, 255].
[[nodiscard]] int histogram_bin(const GrayVolume& volume, std::size_t offset);
[[nodiscard]] Histogram intensity_histogram(const GrayVolume& volume);

/// Threshold bin maximizing between-class variance of "bins <= t" vs the
/// rest, smallest on ties. Compared exactly in integer arithmetic.
/// Throws DegenerateVolume when fewer than two bins are occupied.
[[nodiscard]] int otsu_threshold(const Histogram& histogram);

/// Voxels in bins <= t* (the darker class) are dendrite. A constant volume
/// yields all background.
[[nodiscard]] LabelVolume otsu_segment(const GrayVolume& volume);

struct KMeansResult {
    double low_centroid = 0.0;
    double high_centroid = 0.0;
    int iterations = 0;
    std::vector<double> objective; // within-cluster sum of squares after each update
};

/// 1-D Lloyd iterations with k = 2 on stored intensities, initialized at the
/// minimum and maximum. Throws DegenerateVolume for a constant volume.
[[nodiscard]] KMeansResult kmeans2(const GrayVolume& volume, int max_iters);

/// The low-centroid cluster is dendrite; a constant volume yields all
/// background. `seed` is accepted for interface symmetry and unused, the
/// initialization being deterministic.
[[nodiscard]] LabelVolume kmeans2_segment(const GrayVolume& volume, int max_iters, std::uint64_t seed = 0);

} // namespace dendseg

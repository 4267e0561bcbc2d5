#pragma once

#include "dendseg/volumeio.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

namespace dendseg {

/// Procedural dendrite volume: capsule arms grown from a common root, dark on
/// a light background, then blurred and noised.
struct SynthSpec {
    Dims3 dims{64, 64, 8};
    int primary_arms = 6;
    double secondary_arm_probability = 0.5;
    double radius_min = 2.5;
    double radius_max = 4.5;
    double background_mean = 170.0;
    double dendrite_mean = 80.0;
    double blur_sigma = 1.0;
    double noise_sigma = 15.0;
    std::uint64_t seed = 0;
};

/// Throws SpecInvalid.
void validate(const SynthSpec& spec);
[[nodiscard]] nlohmann::json to_json(const SynthSpec& spec);
[[nodiscard]] SynthSpec synth_spec_from_json(const nlohmann::json& j, SynthSpec base = {});

struct Capsule {
    std::array<double, 3> a{}; // (x, y, z) voxel coordinates
    std::array<double, 3> b{};
    double radius = 1.0;
};

/// Arm layout for a spec; the first primary_arms capsules start at the root.
[[nodiscard]] std::vector<Capsule> grow_arms(const SynthSpec& spec);

/// Voxels whose centre lies within a capsule.
[[nodiscard]] LabelVolume rasterize(const std::vector<Capsule>& capsules, Dims3 dims);

/// Separable Gaussian blur, borders clamped. sigma 0 returns the input.
[[nodiscard]] FloatVolume gaussian_blur(const FloatVolume& volume, double sigma);

/// u8 grayscale and its exact (pre-blur) label.
[[nodiscard]] std::pair<GrayVolume, LabelVolume> generate(const SynthSpec& spec);

} // namespace dendseg

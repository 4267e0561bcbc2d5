#pragma once

#include "dendseg/volumeio.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <utility>

namespace dendseg {

/// Random flips on every axis, in-plane rotation and shear, and a global
/// brightness/contrast change. Zero ranges disable a transform.
struct AugmentationSpec {
    bool flip_x = false;
    bool flip_y = false;
    bool flip_z = false;
    double rotation_max_deg = 0.0; // <= 45
    double shear_max_deg = 0.0;    // <= 30
    double brightness_delta = 0.0; // absolute, on normalized intensities
    double contrast_min = 1.0;
    double contrast_max = 1.0;
    std::uint64_t seed = 0;

    friend bool operator==(const AugmentationSpec&, const AugmentationSpec&) = default;
};

/// Throws ConfigInvalid.
void validate(const AugmentationSpec& spec);

[[nodiscard]] nlohmann::json to_json(const AugmentationSpec& spec);
[[nodiscard]] AugmentationSpec augmentation_from_json(const nlohmann::json& j);

/// Which transform families an augmentation preset switches on.
struct AugmentationToggles {
    bool flips = false;
    bool rotation = false;
    bool shear = false;
    bool intensity = false;

    friend bool operator==(const AugmentationToggles&, const AugmentationToggles&) = default;
};

/// Full ranges (flips xyz, 45 deg rotation, 30 deg shear, +-0.1 brightness,
/// contrast 0.9..1.1) for every enabled family.
[[nodiscard]] AugmentationSpec make_augmentation(AugmentationToggles toggles, std::uint64_t seed);

struct AugmentationDraw {
    bool flip_x = false;
    bool flip_y = false;
    bool flip_z = false;
    double rotation_rad = 0.0;
    double shear_rad = 0.0;
    double brightness = 0.0;
    double contrast = 1.0;
};

[[nodiscard]] AugmentationDraw draw_augmentation(const AugmentationSpec& spec, std::uint64_t draw_seed);

/// Source (x, y) in the flipped patch sampled by output pixel (x, y). The same
/// map drives image and label resampling.
[[nodiscard]] std::array<double, 2> inplane_source(const AugmentationDraw& draw, int width, int height, double x, double y);

/// Flips, then the in-plane affine (trilinear image, nearest label, out of
/// bounds filled with mean background intensity / label 0), then
/// contrast about the patch mean plus brightness.
[[nodiscard]] std::pair<FloatVolume, LabelVolume> apply_augmentation(const FloatVolume& image, const LabelVolume& label,
                                                                     const AugmentationDraw& draw);

/// Throws ShapeMismatch when image and label dims differ.
[[nodiscard]] std::pair<FloatVolume, LabelVolume> augment(const FloatVolume& image, const LabelVolume& label,
                                                          const AugmentationSpec& spec, std::uint64_t draw_seed);

} // namespace dendseg

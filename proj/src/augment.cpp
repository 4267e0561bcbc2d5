#include "dendseg/augment.hpp"

#include "dendseg/rng.hpp"

#include <cmath>
#include <numbers>

namespace dendseg {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

template <typename T>
Array3<T> flipped(const Array3<T>& in, bool fx, bool fy, bool fz) {
    if (!fx && !fy && !fz) return in;
    const Dims3 d = in.dims();
    Array3<T> out(d);
    for (int z = 0; z < d.depth; ++z)
        for (int y = 0; y < d.height; ++y)
            for (int x = 0; x < d.width; ++x)
                out.at(x, y, z) = in.at(fx ? d.width - 1 - x : x, fy ? d.height - 1 - y : y, fz ? d.depth - 1 - z : z);
    return out;
}

} // namespace

void validate(const AugmentationSpec& s) {
    auto bad = [](const std::string& what) { fail(ErrorCode::ConfigInvalid, "augmentation: " + what); };
    if (!(s.rotation_max_deg >= 0.0 && s.rotation_max_deg <= 45.0)) bad("rotation_max_deg must lie in [0, 45]");
    if (!(s.shear_max_deg >= 0.0 && s.shear_max_deg <= 30.0)) bad("shear_max_deg must lie in [0, 30]");
    if (!(s.brightness_delta >= 0.0 && s.brightness_delta <= 1.0)) bad("brightness_delta must lie in [0, 1]");
    if (!(s.contrast_min > 0.0 && s.contrast_min <= s.contrast_max && std::isfinite(s.contrast_max)))
        bad("contrast range must satisfy 0 < min <= max");
}

nlohmann::json to_json(const AugmentationSpec& s) {
    return {{"flip_x", s.flip_x},
            {"flip_y", s.flip_y},
            {"flip_z", s.flip_z},
            {"rotation_max_deg", s.rotation_max_deg},
            {"shear_max_deg", s.shear_max_deg},
            {"brightness_delta", s.brightness_delta},
            {"contrast_min", s.contrast_min},
            {"contrast_max", s.contrast_max},
            {"seed", s.seed}};
}

AugmentationSpec augmentation_from_json(const nlohmann::json& j) {
    AugmentationSpec s;
    s.flip_x = j.value("flip_x", s.flip_x);
    s.flip_y = j.value("flip_y", s.flip_y);
    s.flip_z = j.value("flip_z", s.flip_z);
    s.rotation_max_deg = j.value("rotation_max_deg", s.rotation_max_deg);
    s.shear_max_deg = j.value("shear_max_deg", s.shear_max_deg);
    s.brightness_delta = j.value("brightness_delta", s.brightness_delta);
    s.contrast_min = j.value("contrast_min", s.contrast_min);
    s.contrast_max = j.value("contrast_max", s.contrast_max);
    s.seed = j.value("seed", s.seed);
    validate(s);
    return s;
}

AugmentationSpec make_augmentation(AugmentationToggles t, std::uint64_t seed) {
    AugmentationSpec s;
    s.flip_x = s.flip_y = s.flip_z = t.flips;
    if (t.rotation) s.rotation_max_deg = 45.0;
    if (t.shear) s.shear_max_deg = 30.0;
    if (t.intensity) {
        s.brightness_delta = 0.1;
        s.contrast_min = 0.9;
        s.contrast_max = 1.1;
    }
    s.seed = seed;
    return s;
}

AugmentationDraw draw_augmentation(const AugmentationSpec& spec, std::uint64_t draw_seed) {
    Rng rng(derive_seed(spec.seed, draw_seed));
    AugmentationDraw d;
    // every field consumes its draws even when disabled, so toggling one
    // transform leaves the others unchanged
    const bool cx = uniform(rng, 0.0, 1.0) < 0.5;
    const bool cy = uniform(rng, 0.0, 1.0) < 0.5;
    const bool cz = uniform(rng, 0.0, 1.0) < 0.5;
    d.flip_x = spec.flip_x && cx;
    d.flip_y = spec.flip_y && cy;
    d.flip_z = spec.flip_z && cz;
    d.rotation_rad = uniform(rng, -spec.rotation_max_deg, spec.rotation_max_deg) * kDegToRad;
    d.shear_rad = uniform(rng, -spec.shear_max_deg, spec.shear_max_deg) * kDegToRad;
    d.brightness = uniform(rng, -spec.brightness_delta, spec.brightness_delta);
    d.contrast = uniform(rng, spec.contrast_min, spec.contrast_max);
    return d;
}

// Forward map about the patch centre is rotation after shear, so the source
// of an output pixel is shear^-1 * rotation^-1 applied to its offset.
std::array<double, 2> inplane_source(const AugmentationDraw& draw, int width, int height, double x, double y) {
    const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(draw.rotation_rad), s = std::sin(draw.rotation_rad);
    const double rx = c * dx + s * dy;
    const double ry = -s * dx + c * dy;
    const double t = std::tan(draw.shear_rad);
    return {rx - t * ry + cx, ry + cy};
}

std::pair<FloatVolume, LabelVolume> apply_augmentation(const FloatVolume& image, const LabelVolume& label,
                                                       const AugmentationDraw& draw) {
    if (image.dims() != label.dims()) fail(ErrorCode::ShapeMismatch, "image and label patches differ in size");
    FloatVolume img = flipped(image, draw.flip_x, draw.flip_y, draw.flip_z);
    Array3<std::uint8_t> lab = flipped(label.array(), draw.flip_x, draw.flip_y, draw.flip_z);
    const Dims3 d = img.dims();

    if (draw.rotation_rad != 0.0 || draw.shear_rad != 0.0) {
        double bg_sum = 0.0, all_sum = 0.0;
        std::size_t bg_n = 0;
        for (std::size_t i = 0; i < img.size(); ++i) {
            all_sum += img.data()[i];
            if (lab.data()[i] == 0) {
                bg_sum += img.data()[i];
                ++bg_n;
            }
        }
        const auto fill = static_cast<float>(bg_n > 0 ? bg_sum / static_cast<double>(bg_n) : all_sum / static_cast<double>(img.size()));

        FloatVolume img2(d);
        Array3<std::uint8_t> lab2(d);
        for (int y = 0; y < d.height; ++y)
            for (int x = 0; x < d.width; ++x) {
                const auto [sx, sy] = inplane_source(draw, d.width, d.height, x, y);
                const bool inside = sx >= 0.0 && sy >= 0.0 && sx <= d.width - 1 && sy <= d.height - 1;
                for (int z = 0; z < d.depth; ++z) {
                    if (!inside) {
                        img2.at(x, y, z) = fill;
                        continue;
                    }
                    // trilinear with an integral z coordinate
                    const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
                    const int x1 = std::min(x0 + 1, d.width - 1), y1 = std::min(y0 + 1, d.height - 1);
                    const double fx = sx - x0, fy = sy - y0;
                    const double v = (1 - fy) * ((1 - fx) * img.at(x0, y0, z) + fx * img.at(x1, y0, z)) +
                                     fy * ((1 - fx) * img.at(x0, y1, z) + fx * img.at(x1, y1, z));
                    img2.at(x, y, z) = static_cast<float>(v);
                    lab2.at(x, y, z) = lab.at(static_cast<int>(std::lround(sx)), static_cast<int>(std::lround(sy)), z);
                }
            }
        img = std::move(img2);
        lab = std::move(lab2);
    }

    if (draw.contrast != 1.0 || draw.brightness != 0.0) {
        double mean = 0.0;
        for (float v : img.data()) mean += v;
        mean /= static_cast<double>(img.size());
        const double offset = draw.brightness + mean * (1.0 - draw.contrast);
        for (float& v : img.data()) v = static_cast<float>(v * draw.contrast + offset);
    }
    return {std::move(img), LabelVolume(d, std::vector<std::uint8_t>(lab.data().begin(), lab.data().end()))};
}

std::pair<FloatVolume, LabelVolume> augment(const FloatVolume& image, const LabelVolume& label, const AugmentationSpec& spec,
                                            std::uint64_t draw_seed) {
    if (image.dims() != label.dims()) fail(ErrorCode::ShapeMismatch, "image and label patches differ in size");
    return apply_augmentation(image, label, draw_augmentation(spec, draw_seed));
}

} // namespace dendseg

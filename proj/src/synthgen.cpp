#include "dendseg/synthgen.hpp"

#include "dendseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dendseg {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 along(const Vec3& p, const Vec3& dir, double t) { return {p[0] + t * dir[0], p[1] + t * dir[1], p[2] + t * dir[2]}; }

Vec3 unit(Vec3 v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}

bool inside(const Vec3& p, Dims3 d) {
    return p[0] >= 0 && p[1] >= 0 && p[2] >= 0 && p[0] <= d.width - 1 && p[1] <= d.height - 1 && p[2] <= d.depth - 1;
}

double segment_distance_sq(const Vec3& p, const Capsule& c) {
    const Vec3 ab{c.b[0] - c.a[0], c.b[1] - c.a[1], c.b[2] - c.a[2]};
    const Vec3 ap{p[0] - c.a[0], p[1] - c.a[1], p[2] - c.a[2]};
    const double len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    double t = len2 > 0 ? (ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec3 q = along(c.a, ab, t);
    const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
    return dx * dx + dy * dy + dz * dz;
}

void blur_axis(std::vector<float>& data, Dims3 d, int axis, const std::vector<double>& kernel) {
    const int radius = static_cast<int>(kernel.size() / 2);
    const int n = d.axis(axis);
    const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? static_cast<std::size_t>(d.width) : static_cast<std::size_t>(d.width) * d.height);
    std::vector<double> line(static_cast<std::size_t>(n));
    const Dims3 lines{axis == 0 ? 1 : d.width, axis == 1 ? 1 : d.height, axis == 2 ? 1 : d.depth};
    for (int z = 0; z < lines.depth; ++z)
        for (int y = 0; y < lines.height; ++y)
            for (int x = 0; x < lines.width; ++x) {
                const std::size_t base = voxel_offset(d, x, y, z);
                for (int i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = data[base + static_cast<std::size_t>(i) * stride];
                for (int i = 0; i < n; ++i) {
                    double acc = 0.0;
                    for (int k = -radius; k <= radius; ++k) {
                        const int j = std::clamp(i + k, 0, n - 1);
                        acc += kernel[static_cast<std::size_t>(k + radius)] * line[static_cast<std::size_t>(j)];
                    }
                    data[base + static_cast<std::size_t>(i) * stride] = static_cast<float>(acc);
                }
            }
}

} // namespace

void validate(const SynthSpec& s) {
    auto bad = [](const std::string& what) { fail(ErrorCode::SpecInvalid, "synth spec: " + what); };
    if (s.dims.width < 16 || s.dims.height < 16 || s.dims.depth < 4) bad("dims must be at least 16x16x4");
    if (s.primary_arms < 1) bad("primary_arms must be >= 1");
    if (!(s.secondary_arm_probability >= 0.0 && s.secondary_arm_probability <= 1.0))
        bad("secondary_arm_probability must lie in [0, 1]");
    if (!(s.radius_min >= 1.0 && s.radius_min <= s.radius_max)) bad("radius range must satisfy 1 <= min <= max");
    if (!(s.dendrite_mean >= 0.0 && s.background_mean <= 255.0 && s.dendrite_mean < s.background_mean))
        bad("intensities must satisfy 0 <= dendrite_mean < background_mean <= 255");
    if (!(s.blur_sigma >= 0.0 && s.noise_sigma >= 0.0)) bad("sigmas must be >= 0");
}

nlohmann::json to_json(const SynthSpec& s) {
    return {{"dims", {s.dims.width, s.dims.height, s.dims.depth}},
            {"primary_arms", s.primary_arms},
            {"secondary_arm_probability", s.secondary_arm_probability},
            {"radius_min", s.radius_min},
            {"radius_max", s.radius_max},
            {"background_mean", s.background_mean},
            {"dendrite_mean", s.dendrite_mean},
            {"blur_sigma", s.blur_sigma},
            {"noise_sigma", s.noise_sigma},
            {"seed", s.seed}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j, SynthSpec s) {
    try {
        if (j.contains("dims")) {
            const auto& d = j["dims"];
            s.dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
        }
        s.primary_arms = j.value("primary_arms", s.primary_arms);
        s.secondary_arm_probability = j.value("secondary_arm_probability", s.secondary_arm_probability);
        s.radius_min = j.value("radius_min", s.radius_min);
        s.radius_max = j.value("radius_max", s.radius_max);
        s.background_mean = j.value("background_mean", s.background_mean);
        s.dendrite_mean = j.value("dendrite_mean", s.dendrite_mean);
        s.blur_sigma = j.value("blur_sigma", s.blur_sigma);
        s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::SpecInvalid, std::string("synth spec: ") + e.what());
    }
    validate(s);
    return s;
}

std::vector<Capsule> grow_arms(const SynthSpec& spec) {
    validate(spec);
    Rng rng(derive_seed(spec.seed, "arms"));
    const Dims3 d = spec.dims;
    const double span = std::min(d.width, d.height);
    const Vec3 root{0.5 * (d.width - 1) + uniform(rng, -0.1, 0.1) * d.width,
                    0.5 * (d.height - 1) + uniform(rng, -0.1, 0.1) * d.height,
                    0.5 * (d.depth - 1) + uniform(rng, -0.15, 0.15) * d.depth};

    std::vector<Capsule> primaries, secondaries;
    for (int k = 0; k < spec.primary_arms; ++k) {
        const double phi = 2.0 * std::numbers::pi * (k + uniform(rng, -0.3, 0.3)) / spec.primary_arms;
        const double slope = uniform(rng, -0.15, 0.15);
        const Vec3 dir = unit({std::cos(phi), std::sin(phi), slope});
        const double length = uniform(rng, 0.35, 0.55) * span;
        const double radius = uniform(rng, spec.radius_min, spec.radius_max);
        primaries.push_back({root, along(root, dir, length), radius});

        for (const double t : {0.35, 0.6, 0.85}) {
            const bool spawn = uniform(rng, 0.0, 1.0) < spec.secondary_arm_probability;
            const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
            const double turn = side * (0.5 * std::numbers::pi + uniform(rng, -0.35, 0.35));
            const double child_slope = uniform(rng, -0.15, 0.15);
            const double child_length = uniform(rng, 0.25, 0.45) * length;
            const double child_radius = std::max(spec.radius_min, uniform(rng, 0.6, 0.9) * radius);
            const Vec3 start = along(root, dir, t * length);
            if (!spawn || !inside(start, d)) continue;
            const Vec3 cdir = unit({std::cos(phi + turn), std::sin(phi + turn), child_slope});
            secondaries.push_back({start, along(start, cdir, child_length), child_radius});
        }
    }
    primaries.insert(primaries.end(), secondaries.begin(), secondaries.end());
    return primaries;
}

LabelVolume rasterize(const std::vector<Capsule>& capsules, Dims3 dims) {
    LabelVolume out(dims);
    for (const Capsule& c : capsules) {
        int lo[3], hi[3];
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max(0, static_cast<int>(std::floor(std::min(c.a[a], c.b[a]) - c.radius)));
            hi[a] = std::min(dims.axis(a) - 1, static_cast<int>(std::ceil(std::max(c.a[a], c.b[a]) + c.radius)));
        }
        const double r2 = c.radius * c.radius;
        for (int z = lo[2]; z <= hi[2]; ++z)
            for (int y = lo[1]; y <= hi[1]; ++y)
                for (int x = lo[0]; x <= hi[0]; ++x)
                    if (segment_distance_sq({double(x), double(y), double(z)}, c) <= r2) out.set(x, y, z, true);
    }
    return out;
}

FloatVolume gaussian_blur(const FloatVolume& volume, double sigma) {
    if (sigma <= 0.0) return volume;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int k = -radius; k <= radius; ++k) norm += kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
    for (double& w : kernel) w /= norm;
    std::vector<float> data(volume.data().begin(), volume.data().end());
    for (int axis = 0; axis < 3; ++axis) blur_axis(data, volume.dims(), axis, kernel);
    return FloatVolume(volume.dims(), std::move(data));
}

std::pair<GrayVolume, LabelVolume> generate(const SynthSpec& spec) {
    validate(spec);
    LabelVolume label = rasterize(grow_arms(spec), spec.dims);
    FloatVolume gray(spec.dims);
    const auto lab = label.data();
    for (std::size_t i = 0; i < lab.size(); ++i)
        gray.data()[i] = static_cast<float>(lab[i] ? spec.dendrite_mean : spec.background_mean);
    gray = gaussian_blur(gray, spec.blur_sigma);

    Rng noise(derive_seed(spec.seed, "noise"));
    std::vector<std::uint8_t> bytes(gray.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        double v = gray.data()[i];
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * normal(noise);
        bytes[i] = static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 255.0) + 0.5));
    }
    return {GrayVolume(spec.dims, std::move(bytes)), std::move(label)};
}

} // namespace dendseg

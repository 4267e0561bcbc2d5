#include "oracles.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace oracle {

using dendseg::uniform;
using dendseg::uniform_index;

Slice random_slice(Rng& rng, int width, int height) {
    Slice s{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 0)};
    switch (uniform_index(rng, 6)) {
    case 0: break; // empty
    case 1: std::fill(s.data.begin(), s.data.end(), 1); break;
    case 2: s.at(static_cast<int>(uniform_index(rng, width)), static_cast<int>(uniform_index(rng, height))) = 1; break;
    case 3: {
        const double p = uniform(rng, 0.05, 0.95);
        for (auto& v : s.data) v = uniform(rng, 0, 1) < p ? 1 : 0;
        break;
    }
    default: {
        const int blobs = 1 + static_cast<int>(uniform_index(rng, 4));
        for (int b = 0; b < blobs; ++b) {
            const double cx = uniform(rng, 0, width), cy = uniform(rng, 0, height);
            const double r = uniform(rng, 0.5, 0.4 * std::max(width, height));
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x)
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) s.at(x, y) = 1;
        }
    }
    }
    return s;
}

Slice perturbed(const Slice& base, Rng& rng) {
    Slice s = base;
    const double p = uniform(rng, 0.0, 0.2);
    for (auto& v : s.data)
        if (uniform(rng, 0, 1) < p) v = v ? 0 : 1;
    return s;
}

double accuracy(const Slice& pred, const Slice& truth) {
    std::size_t agree = 0;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) agree += (pred.at(x, y) != 0) == (truth.at(x, y) != 0);
    return static_cast<double>(agree) / static_cast<double>(pred.width * pred.height);
}

double iou(const Slice& pred, const Slice& truth) {
    std::size_t inter = 0, uni = 0;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            const bool p = pred.at(x, y) != 0, t = truth.at(x, y) != 0;
            inter += p && t;
            uni += p || t;
        }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::pair<int, int>> boundary(const Slice& mask) {
    // Pad with a ring of background, then count foreground 4-neighbours.
    const int W = mask.width + 2, H = mask.height + 2;
    std::vector<int> padded(static_cast<std::size_t>(W * H), 0);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) padded[static_cast<std::size_t>((y + 1) * W + x + 1)] = mask.at(x, y) != 0;
    std::vector<std::pair<int, int>> out;
    for (int y = 1; y < H - 1; ++y)
        for (int x = 1; x < W - 1; ++x) {
            const auto at = [&](int xx, int yy) { return padded[static_cast<std::size_t>(yy * W + xx)]; };
            if (at(x, y) && at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) < 4) out.emplace_back(x - 1, y - 1);
        }
    return out;
}

namespace {

std::vector<double> nearest(const std::vector<std::pair<int, int>>& from, const std::vector<std::pair<int, int>>& to) {
    std::vector<double> out;
    for (const auto& [px, py] : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [qx, qy] : to) best = std::min(best, std::sqrt(double((px - qx) * (px - qx) + (py - qy) * (py - qy))));
        out.push_back(best);
    }
    return out;
}

} // namespace

double bf1(const Slice& pred, const Slice& truth, double tolerance) {
    const auto bp = boundary(pred), bt = boundary(truth);
    if (bp.empty() && bt.empty()) return 1.0;
    if (bp.empty() || bt.empty()) return 0.0;
    auto frac = [&](const std::vector<double>& d) {
        return static_cast<double>(std::count_if(d.begin(), d.end(), [&](double v) { return v <= tolerance; })) /
               static_cast<double>(d.size());
    };
    const double p = frac(nearest(bp, bt)), r = frac(nearest(bt, bp));
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double bde(const Slice& pred, const Slice& truth) {
    const auto bp = boundary(pred), bt = boundary(truth);
    if (bp.empty() && bt.empty()) return 0.0;
    if (bp.empty() || bt.empty()) return std::sqrt(double(pred.width) * pred.width + double(pred.height) * pred.height);
    auto mean = [](const std::vector<double>& d) {
        double s = 0.0;
        for (double v : d) s += v;
        return s / static_cast<double>(d.size());
    };
    return 0.5 * (mean(nearest(bp, bt)) + mean(nearest(bt, bp)));
}

std::vector<double> conv3d(const std::vector<double>& in, int n, int ci, int d, int h, int w, const std::vector<double>& weight,
                           int co, int kd, int kh, int kw, const std::vector<double>& bias, std::array<int, 3> stride,
                           std::array<int, 3> pad, std::array<int, 3>& out_dims) {
    const int od = (d + 2 * pad[0] - kd) / stride[0] + 1;
    const int oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    const int ow = (w + 2 * pad[2] - kw) / stride[2] + 1;
    out_dims = {od, oh, ow};
    std::vector<double> out(static_cast<std::size_t>(n) * co * od * oh * ow, 0.0);
    auto I = [&](int b, int c, int z, int y, int x) { return in[(((static_cast<std::size_t>(b) * ci + c) * d + z) * h + y) * w + x]; };
    auto K = [&](int o, int c, int z, int y, int x) {
        return weight[(((static_cast<std::size_t>(o) * ci + c) * kd + z) * kh + y) * kw + x];
    };
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < co; ++o)
            for (int z = 0; z < od; ++z)
                for (int y = 0; y < oh; ++y)
                    for (int x = 0; x < ow; ++x) {
                        double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
                        for (int c = 0; c < ci; ++c)
                            for (int a = 0; a < kd; ++a)
                                for (int p = 0; p < kh; ++p)
                                    for (int q = 0; q < kw; ++q) {
                                        const int zz = z * stride[0] - pad[0] + a, yy = y * stride[1] - pad[1] + p,
                                                  xx = x * stride[2] - pad[2] + q;
                                        if (zz < 0 || yy < 0 || xx < 0 || zz >= d || yy >= h || xx >= w) continue;
                                        acc += I(b, c, zz, yy, xx) * K(o, c, a, p, q);
                                    }
                        out[(((static_cast<std::size_t>(b) * co + o) * od + z) * oh + y) * ow + x] = acc;
                    }
    return out;
}

int exhaustive_otsu(const dendseg::Histogram& histogram) {
    using boost::multiprecision::cpp_rational;
    cpp_rational total = 0;
    for (auto c : histogram) total += c;
    int best_t = -1;
    cpp_rational best = -1;
    for (int t = 0; t < 255; ++t) {
        cpp_rational n0 = 0, s0 = 0, n1 = 0, s1 = 0;
        for (int i = 0; i < 256; ++i) {
            const cpp_rational c = histogram[static_cast<std::size_t>(i)];
            (i <= t ? n0 : n1) += c;
            (i <= t ? s0 : s1) += c * i;
        }
        if (n0 == 0 || n1 == 0) continue;
        const cpp_rational w0 = n0 / total, w1 = n1 / total, mu0 = s0 / n0, mu1 = s1 / n1;
        const cpp_rational between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best) {
            best = between;
            best_t = t;
        }
    }
    return best_t;
}

std::vector<int> coverage(const dendseg::PatchGrid& grid) {
    const auto& v = grid.volume;
    std::vector<int> count(v.voxel_count(), 0);
    for (int oz : grid.zs)
        for (int oy : grid.ys)
            for (int ox : grid.xs)
                for (int z = oz; z < oz + grid.patch.depth; ++z)
                    for (int y = oy; y < oy + grid.patch.height; ++y)
                        for (int x = ox; x < ox + grid.patch.width; ++x) ++count[dendseg::voxel_offset(v, x, y, z)];
    return count;
}

GradCheck check_gradients(const std::function<dendseg::Tensor<double>(const std::vector<dendseg::Tensor<double>>&)>& loss,
                          std::vector<dendseg::Tensor<double>> inputs, Rng& rng, std::size_t max_entries) {
    using dendseg::Tensor;
    for (auto& t : inputs) t.set_requires_grad(true);
    std::vector<std::vector<double>> analytic;
    {
        dendseg::Tape<double> tape;
        dendseg::TapeScope<double> scope(&tape);
        const Tensor<double> l = loss(inputs);
        dendseg::backward(l);
        for (const auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());
    }
    auto value = [&]() {
        dendseg::NoGradScope<double> off;
        return loss(inputs).item();
    };

    GradCheck r;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto& t = inputs[k];
        std::vector<std::size_t> idx(t.numel());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        dendseg::shuffle(std::span<std::size_t>(idx), rng);
        idx.resize(std::min(idx.size(), max_entries));
        for (std::size_t i : idx) {
            auto vals = t.mutable_values();
            const double x0 = vals[i];
            const double h = 1e-4 * std::max(1.0, std::abs(x0));
            vals[i] = x0 + h;
            const double up = value();
            vals[i] = x0 - h;
            const double down = value();
            vals[i] = x0;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[k].empty() ? 0.0 : analytic[k][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
            ++r.checked;
        }
    }
    return r;
}

TempDir::TempDir(const std::string& tag) {
    static int counter = 0;
    Rng rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("dendseg_" + tag + "_" + std::to_string(++counter) + "_" + dendseg::hex64(rng()));
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

} // namespace oracle

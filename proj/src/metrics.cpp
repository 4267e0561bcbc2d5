#include "dendseg/metrics.hpp"

#include <cmath>
#include <limits>

namespace dendseg {

namespace {

void check_same_shape(const Slice& a, const Slice& b) {
    if (a.width != b.width || a.height != b.height)
        fail(ErrorCode::ShapeMismatch, "slices are " + std::to_string(a.width) + "x" + std::to_string(a.height) + " and " +
                                           std::to_string(b.width) + "x" + std::to_string(b.height));
}

void check_same_dims(const LabelVolume& a, const LabelVolume& b) {
    if (a.dims() != b.dims()) fail(ErrorCode::ShapeMismatch, "prediction and truth volumes differ in size");
}

// Squared distance from each pixel of `from` to the nearest pixel of `to`.
// Returns an empty vector when `to` is empty.
std::vector<long long> nearest_squared(const std::vector<Pixel>& from, const std::vector<Pixel>& to, int width,
                                       int height, DistanceMethod method) {
    std::vector<long long> out;
    if (to.empty()) return out;
    out.reserve(from.size());
    if (method == DistanceMethod::brute_force) {
        for (const Pixel& p : from) {
            long long best = std::numeric_limits<long long>::max();
            for (const Pixel& q : to) {
                const long long dx = p.x - q.x, dy = p.y - q.y;
                best = std::min(best, dx * dx + dy * dy);
            }
            out.push_back(best);
        }
        return out;
    }
    const auto dt = squared_distance_transform(width, height, to);
    for (const Pixel& p : from)
        out.push_back(dt[static_cast<std::size_t>(p.y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(p.x)]);
    return out;
}

} // namespace

ConfusionCounts confusion(const Slice& pred, const Slice& truth) {
    check_same_shape(pred, truth);
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0, t = truth.data[i] != 0;
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double accuracy(const Slice& pred, const Slice& truth) {
    const ConfusionCounts c = confusion(pred, truth);
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double iou(const Slice& pred, const Slice& truth) {
    const ConfusionCounts c = confusion(pred, truth);
    const std::size_t uni = c.tp + c.fp + c.fn;
    return uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
}

std::vector<Pixel> boundary_pixels(const Slice& mask) {
    std::vector<Pixel> out;
    auto fg = [&](int x, int y) {
        return x >= 0 && y >= 0 && x < mask.width && y < mask.height && mask.at(x, y) != 0;
    };
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (fg(x, y) && (!fg(x - 1, y) || !fg(x + 1, y) || !fg(x, y - 1) || !fg(x, y + 1))) out.push_back({x, y});
    return out;
}

// Two passes: exact 1D distances down each column, then the lower envelope of
// parabolas along each row (Felzenszwalb and Huttenlocher). Columns without a
// site contribute no parabola, so nothing infinite enters the arithmetic.
std::vector<long long> squared_distance_transform(int width, int height, const std::vector<Pixel>& sites) {
    const auto W = static_cast<std::size_t>(width), H = static_cast<std::size_t>(height);
    std::vector<long long> out(W * H, -1);
    if (sites.empty()) return out;

    constexpr long long kNone = -1;
    std::vector<long long> col(W * H, kNone); // vertical distance to nearest site in the column
    std::vector<char> site(W * H, 0);
    for (const Pixel& p : sites) site[static_cast<std::size_t>(p.y) * W + static_cast<std::size_t>(p.x)] = 1;
    for (std::size_t x = 0; x < W; ++x) {
        long long last = kNone;
        for (std::size_t y = 0; y < H; ++y) {
            if (site[y * W + x]) last = static_cast<long long>(y);
            if (last != kNone) col[y * W + x] = static_cast<long long>(y) - last;
        }
        last = kNone;
        for (std::size_t y = H; y-- > 0;) {
            if (site[y * W + x]) last = static_cast<long long>(y);
            if (last != kNone) {
                const long long d = last - static_cast<long long>(y);
                if (col[y * W + x] == kNone || d < col[y * W + x]) col[y * W + x] = d;
            }
        }
    }

    std::vector<long long> vx(W), f(W);
    std::vector<double> zb(W + 1);
    for (std::size_t y = 0; y < H; ++y) {
        std::size_t k = 0;
        bool any = false;
        for (std::size_t q = 0; q < W; ++q) {
            const long long g = col[y * W + q];
            if (g == kNone) continue;
            const long long fq = g * g;
            const auto qq = static_cast<long long>(q);
            if (!any) {
                vx[0] = qq;
                f[0] = fq;
                zb[0] = -std::numeric_limits<double>::infinity();
                zb[1] = std::numeric_limits<double>::infinity();
                k = 0;
                any = true;
                continue;
            }
            double s = 0.0;
            while (true) {
                const long long v = vx[k];
                s = static_cast<double>((fq + qq * qq) - (f[k] + v * v)) / static_cast<double>(2 * (qq - v));
                if (s > zb[k]) break;
                --k; // zb[0] is -inf, so this stops at 0
            }
            ++k;
            vx[k] = qq;
            f[k] = fq;
            zb[k] = s;
            zb[k + 1] = std::numeric_limits<double>::infinity();
        }
        std::size_t j = 0;
        for (std::size_t x = 0; x < W; ++x) {
            while (zb[j + 1] < static_cast<double>(x)) ++j;
            const long long dx = static_cast<long long>(x) - vx[j];
            out[y * W + x] = dx * dx + f[j];
        }
    }
    return out;
}

double bf1(const Slice& pred, const Slice& truth, double tolerance, DistanceMethod method) {
    check_same_shape(pred, truth);
    const auto bp = boundary_pixels(pred);
    const auto bt = boundary_pixels(truth);
    if (bp.empty() && bt.empty()) return 1.0;
    if (bp.empty() || bt.empty()) return 0.0;
    const double tol2 = tolerance * tolerance;
    auto within = [&](const std::vector<long long>& d) {
        std::size_t n = 0;
        for (long long v : d) n += static_cast<double>(v) <= tol2 ? 1 : 0;
        return n;
    };
    const double precision =
        static_cast<double>(within(nearest_squared(bp, bt, pred.width, pred.height, method))) / static_cast<double>(bp.size());
    const double recall =
        static_cast<double>(within(nearest_squared(bt, bp, pred.width, pred.height, method))) / static_cast<double>(bt.size());
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

double bde(const Slice& pred, const Slice& truth, DistanceMethod method) {
    check_same_shape(pred, truth);
    const auto bp = boundary_pixels(pred);
    const auto bt = boundary_pixels(truth);
    if (bp.empty() && bt.empty()) return 0.0;
    if (bp.empty() || bt.empty())
        return std::sqrt(static_cast<double>(pred.width) * pred.width + static_cast<double>(pred.height) * pred.height);
    auto mean_dist = [](const std::vector<long long>& d) {
        double sum = 0.0;
        for (long long v : d) sum += std::sqrt(static_cast<double>(v));
        return sum / static_cast<double>(d.size());
    };
    const double a = mean_dist(nearest_squared(bp, bt, pred.width, pred.height, method));
    const double b = mean_dist(nearest_squared(bt, bp, pred.width, pred.height, method));
    return 0.5 * (a + b);
}

SliceMetrics slice_metrics(const Slice& pred, const Slice& truth, DistanceMethod method) {
    SliceMetrics m;
    m.accuracy = accuracy(pred, truth);
    m.iou = iou(pred, truth);
    m.bf1 = bf1(pred, truth, kBoundaryTolerance, method);
    m.bde = bde(pred, truth, method);
    return m;
}

MetricsReport evaluate(const LabelVolume& pred, const LabelVolume& truth, DistanceMethod method) {
    check_same_dims(pred, truth);
    MetricsReport report;
    for (int z = 0; z < pred.dims().depth; ++z) {
        SliceMetrics m = slice_metrics(extract_plane(pred, PlaneAxis::xy, z), extract_plane(truth, PlaneAxis::xy, z), method);
        m.z = z;
        report.slices.push_back(m);
    }
    const auto n = static_cast<double>(report.slices.size());
    for (const auto& s : report.slices) {
        report.aggregate.accuracy += s.accuracy;
        report.aggregate.iou += s.iou;
        report.aggregate.bf1 += s.bf1;
        report.aggregate.bde += s.bde;
    }
    report.aggregate.accuracy /= n;
    report.aggregate.iou /= n;
    report.aggregate.bf1 /= n;
    report.aggregate.bde /= n;
    return report;
}

double mean_slice_iou(const LabelVolume& pred, const LabelVolume& truth) {
    check_same_dims(pred, truth);
    double sum = 0.0;
    for (int z = 0; z < pred.dims().depth; ++z)
        sum += iou(extract_plane(pred, PlaneAxis::xy, z), extract_plane(truth, PlaneAxis::xy, z));
    return sum / static_cast<double>(pred.dims().depth);
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    j["slices"] = nlohmann::json::array();
    for (const auto& s : slices)
        j["slices"].push_back({{"z", s.z}, {"accuracy", s.accuracy}, {"iou", s.iou}, {"bf1", s.bf1}, {"bde", s.bde}});
    j["aggregate"] = {{"accuracy", aggregate.accuracy},
                      {"iou", aggregate.iou},
                      {"bf1", aggregate.bf1},
                      {"bde", aggregate.bde},
                      {"slice_count", slices.size()}};
    return j;
}

} // namespace dendseg

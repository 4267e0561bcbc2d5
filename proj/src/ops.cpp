#include "dendseg/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dendseg {

namespace {

template <typename Real>
using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapR = Eigen::Map<MatR<Real>>;
template <typename Real>
using CMapR = Eigen::Map<const MatR<Real>>;

using NodeRef = std::size_t;

// Upper bound on the im2col buffer (elements); larger outputs are processed in
// chunks of whole output rows.
constexpr std::size_t kColumnBudget = std::size_t{1} << 23;

struct Vol5 {
    int n = 0, c = 0, d = 0, h = 0, w = 0;
    [[nodiscard]] std::size_t spatial() const noexcept {
        return static_cast<std::size_t>(d) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
};

Vol5 as_vol5(const Shape& s, int spatial_rank, const char* op, const char* what) {
    if (static_cast<int>(s.size()) != spatial_rank + 2)
        fail(ErrorCode::ShapeMismatch, std::string(op) + ": " + what + " must have rank " +
                                           std::to_string(spatial_rank + 2) + ", got " + shape_string(s));
    if (spatial_rank == 3) return {s[0], s[1], s[2], s[3], s[4]};
    return {s[0], s[1], 1, s[2], s[3]};
}

Shape shape_of(const Vol5& v, int spatial_rank) {
    if (spatial_rank == 3) return {v.n, v.c, v.d, v.h, v.w};
    return {v.n, v.c, v.h, v.w};
}

struct ConvGeom {
    int n, ci, co;
    int d, h, w;
    int kd, kh, kw;
    int sd, sh, sw;
    int pd, ph, pw;
    int od, oh, ow;

    [[nodiscard]] std::size_t k() const noexcept {
        return static_cast<std::size_t>(ci) * static_cast<std::size_t>(kd) * static_cast<std::size_t>(kh) *
               static_cast<std::size_t>(kw);
    }
    [[nodiscard]] std::size_t in_plane() const noexcept {
        return static_cast<std::size_t>(d) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    [[nodiscard]] std::size_t out_plane() const noexcept {
        return static_cast<std::size_t>(od) * static_cast<std::size_t>(oh) * static_cast<std::size_t>(ow);
    }
    [[nodiscard]] bool pointwise() const noexcept {
        return kd == 1 && kh == 1 && kw == 1 && sd == 1 && sh == 1 && sw == 1 && pd == 0 && ph == 0 && pw == 0;
    }
    [[nodiscard]] int rows_per_chunk() const noexcept {
        const std::size_t per_row = k() * static_cast<std::size_t>(ow);
        const std::size_t rows = std::max<std::size_t>(1, kColumnBudget / std::max<std::size_t>(1, per_row));
        return static_cast<int>(std::min<std::size_t>(rows, static_cast<std::size_t>(od) * static_cast<std::size_t>(oh)));
    }
};

// Column matrix for output rows [r0, r1), row index r = oz * oh + oy.
// Layout: K x ((r1 - r0) * ow), K index = ((ci * kd + kz) * kh + ky) * kw + kx.
template <typename Real>
void im2col(const Real* x, const ConvGeom& g, int r0, int r1, Real* col) {
    const std::size_t ncols = static_cast<std::size_t>(r1 - r0) * static_cast<std::size_t>(g.ow);
    std::size_t krow = 0;
    for (int ci = 0; ci < g.ci; ++ci)
        for (int kz = 0; kz < g.kd; ++kz)
            for (int ky = 0; ky < g.kh; ++ky)
                for (int kx = 0; kx < g.kw; ++kx, ++krow) {
                    Real* dst = col + krow * ncols;
                    for (int r = r0; r < r1; ++r) {
                        Real* out = dst + static_cast<std::size_t>(r - r0) * static_cast<std::size_t>(g.ow);
                        const int iz = (r / g.oh) * g.sd - g.pd + kz;
                        const int iy = (r % g.oh) * g.sh - g.ph + ky;
                        if (iz < 0 || iz >= g.d || iy < 0 || iy >= g.h) {
                            std::fill(out, out + g.ow, Real(0));
                            continue;
                        }
                        const Real* src = x + ((static_cast<std::size_t>(ci) * g.d + iz) * g.h + iy) * g.w;
                        if (g.sw == 1) {
                            const int lo = std::clamp(g.pw - kx, 0, g.ow);
                            const int hi = std::clamp(g.w + g.pw - kx, lo, g.ow);
                            std::fill(out, out + lo, Real(0));
                            if (hi > lo) std::memcpy(out + lo, src + (lo - g.pw + kx), sizeof(Real) * static_cast<std::size_t>(hi - lo));
                            std::fill(out + hi, out + g.ow, Real(0));
                        } else {
                            for (int ox = 0; ox < g.ow; ++ox) {
                                const int ix = ox * g.sw - g.pw + kx;
                                out[ox] = (ix >= 0 && ix < g.w) ? src[ix] : Real(0);
                            }
                        }
                    }
                }
}

template <typename Real>
void col2im_add(const Real* col, const ConvGeom& g, int r0, int r1, Real* dx) {
    const std::size_t ncols = static_cast<std::size_t>(r1 - r0) * static_cast<std::size_t>(g.ow);
    std::size_t krow = 0;
    for (int ci = 0; ci < g.ci; ++ci)
        for (int kz = 0; kz < g.kd; ++kz)
            for (int ky = 0; ky < g.kh; ++ky)
                for (int kx = 0; kx < g.kw; ++kx, ++krow) {
                    const Real* src = col + krow * ncols;
                    for (int r = r0; r < r1; ++r) {
                        const int iz = (r / g.oh) * g.sd - g.pd + kz;
                        const int iy = (r % g.oh) * g.sh - g.ph + ky;
                        if (iz < 0 || iz >= g.d || iy < 0 || iy >= g.h) continue;
                        const Real* in = src + static_cast<std::size_t>(r - r0) * static_cast<std::size_t>(g.ow);
                        Real* dst = dx + ((static_cast<std::size_t>(ci) * g.d + iz) * g.h + iy) * g.w;
                        for (int ox = 0; ox < g.ow; ++ox) {
                            const int ix = ox * g.sw - g.pw + kx;
                            if (ix >= 0 && ix < g.w) dst[ix] += in[ox];
                        }
                    }
                }
}

template <typename Real>
Tensor<Real> conv_nd(const Tensor<Real>& input, const Tensor<Real>& weight, const Tensor<Real>& bias, Int3 stride,
                     Int3 padding, int spatial_rank, const char* op) {
    if (!input.defined() || !weight.defined()) fail(ErrorCode::ShapeMismatch, std::string(op) + ": undefined operand");
    const Vol5 in = as_vol5(input.shape(), spatial_rank, op, "input");
    const Vol5 wt = as_vol5(weight.shape(), spatial_rank, op, "weight");
    if (wt.c != in.c)
        fail(ErrorCode::ShapeMismatch, std::string(op) + ": weight expects " + std::to_string(wt.c) +
                                           " input channels, input has " + std::to_string(in.c));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != wt.n))
        fail(ErrorCode::ShapeMismatch, std::string(op) + ": bias must have shape (" + std::to_string(wt.n) + ")");
    for (int i = 0; i < 3; ++i)
        if (stride[static_cast<std::size_t>(i)] < 1 || padding[static_cast<std::size_t>(i)] < 0)
            fail(ErrorCode::ShapeMismatch, std::string(op) + ": stride must be >= 1 and padding >= 0");

    ConvGeom g{in.n, in.c, wt.n, in.d, in.h, in.w, wt.d, wt.h, wt.w, stride[0], stride[1], stride[2],
               padding[0], padding[1], padding[2], 0, 0, 0};
    auto out_dim = [](int size, int k, int s, int p) {
        const int span = size + 2 * p - k;
        return span < 0 ? 0 : span / s + 1;
    };
    g.od = out_dim(g.d, g.kd, g.sd, g.pd);
    g.oh = out_dim(g.h, g.kh, g.sh, g.ph);
    g.ow = out_dim(g.w, g.kw, g.sw, g.pw);
    if (g.od < 1 || g.oh < 1 || g.ow < 1)
        fail(ErrorCode::EmptyOutput, std::string(op) + ": kernel larger than padded input " + shape_string(input.shape()));

    const std::size_t K = g.k();
    const std::size_t P = g.out_plane();
    const int rows_total = g.od * g.oh;
    const int chunk = g.rows_per_chunk();

    Buffer<Real> out(static_cast<std::size_t>(g.n) * static_cast<std::size_t>(g.co) * P);
    const Real* x = input.values().data();
    CMapR<Real> wm(weight.values().data(), g.co, static_cast<Eigen::Index>(K));
    Buffer<Real> col;
    if (!g.pointwise()) col.resize(K * static_cast<std::size_t>(chunk) * static_cast<std::size_t>(g.ow));

    for (int n = 0; n < g.n; ++n) {
        const Real* xn = x + static_cast<std::size_t>(n) * g.ci * g.in_plane();
        MapR<Real> y(out.data() + static_cast<std::size_t>(n) * g.co * P, g.co, static_cast<Eigen::Index>(P));
        if (g.pointwise()) {
            y.noalias() = wm * CMapR<Real>(xn, g.ci, static_cast<Eigen::Index>(P));
        } else {
            for (int r0 = 0; r0 < rows_total; r0 += chunk) {
                const int r1 = std::min(rows_total, r0 + chunk);
                const auto cols = static_cast<Eigen::Index>(r1 - r0) * g.ow;
                im2col(xn, g, r0, r1, col.data());
                y.middleCols(static_cast<Eigen::Index>(r0) * g.ow, cols).noalias() =
                    wm * CMapR<Real>(col.data(), static_cast<Eigen::Index>(K), cols);
            }
        }
        if (bias.defined()) {
            const Real* b = bias.values().data();
            for (int c = 0; c < g.co; ++c) y.row(c).array() += b[c];
        }
    }
    detail::check_finite<Real>(out, op);

    Vol5 ov{g.n, g.co, g.od, g.oh, g.ow};
    Tensor<Real> result(shape_of(ov, spatial_rank), std::move(out));
    Tape<Real>* tape = detail::recording_tape<Real>({&input, &weight, &bias});
    if (!tape) return result;

    auto xn_ = input.node();
    auto wn_ = weight.node();
    auto bn_ = bias.defined() ? bias.node() : nullptr;
    auto yn_ = result.node();
    tape->record({xn_, wn_, bn_}, yn_, [g, K, P, rows_total, chunk, xn_, wn_, bn_, yn_]() {
        const bool need_dx = xn_->requires_grad;
        const bool need_dw = wn_->requires_grad;
        const bool need_db = bn_ && bn_->requires_grad;
        Real* dx = need_dx ? detail::grad_of(*xn_).data() : nullptr;
        Real* dw = need_dw ? detail::grad_of(*wn_).data() : nullptr;
        Real* db = need_db ? detail::grad_of(*bn_).data() : nullptr;
        const Real* dy = yn_->grad.data();
        CMapR<Real> wm(wn_->values.data(), g.co, static_cast<Eigen::Index>(K));
        Buffer<Real> col, dcol;
        if (!g.pointwise()) {
            const std::size_t sz = K * static_cast<std::size_t>(chunk) * static_cast<std::size_t>(g.ow);
            if (need_dw) col.resize(sz);
            if (need_dx) dcol.resize(sz);
        }
        for (int n = 0; n < g.n; ++n) {
            const Real* xn = xn_->values.data() + static_cast<std::size_t>(n) * g.ci * g.in_plane();
            CMapR<Real> dyn(dy + static_cast<std::size_t>(n) * g.co * P, g.co, static_cast<Eigen::Index>(P));
            if (need_db)
                for (int c = 0; c < g.co; ++c) db[c] += dyn.row(c).sum();
            if (g.pointwise()) {
                if (need_dw)
                    MapR<Real>(dw, g.co, static_cast<Eigen::Index>(K)).noalias() +=
                        dyn * CMapR<Real>(xn, g.ci, static_cast<Eigen::Index>(P)).transpose();
                if (need_dx)
                    MapR<Real>(dx + static_cast<std::size_t>(n) * g.ci * g.in_plane(), g.ci,
                               static_cast<Eigen::Index>(P)).noalias() += wm.transpose() * dyn;
                continue;
            }
            for (int r0 = 0; r0 < rows_total; r0 += chunk) {
                const int r1 = std::min(rows_total, r0 + chunk);
                const auto cols = static_cast<Eigen::Index>(r1 - r0) * g.ow;
                const auto dblock = dyn.middleCols(static_cast<Eigen::Index>(r0) * g.ow, cols);
                if (need_dw) {
                    im2col(xn, g, r0, r1, col.data());
                    MapR<Real>(dw, g.co, static_cast<Eigen::Index>(K)).noalias() +=
                        dblock * CMapR<Real>(col.data(), static_cast<Eigen::Index>(K), cols).transpose();
                }
                if (need_dx) {
                    MapR<Real>(dcol.data(), static_cast<Eigen::Index>(K), cols).noalias() = wm.transpose() * dblock;
                    col2im_add(dcol.data(), g, r0, r1, dx + static_cast<std::size_t>(n) * g.ci * g.in_plane());
                }
            }
        }
    });
    return result;
}

template <typename Real>
Tensor<Real> max_pool_nd(const Tensor<Real>& input, Int3 kernel, Int3 stride, int spatial_rank, const char* op) {
    const Vol5 in = as_vol5(input.shape(), spatial_rank, op, "input");
    for (int i = 0; i < 3; ++i)
        if (kernel[static_cast<std::size_t>(i)] < 1 || stride[static_cast<std::size_t>(i)] < 1)
            fail(ErrorCode::ShapeMismatch, std::string(op) + ": kernel and stride must be >= 1");
    const int dims[3] = {in.d, in.h, in.w};
    int od[3];
    for (int i = 0; i < 3; ++i) {
        if (dims[i] < kernel[static_cast<std::size_t>(i)])
            fail(ErrorCode::ShapeMismatch, std::string(op) + ": window larger than input " + shape_string(input.shape()));
        od[i] = (dims[i] - kernel[static_cast<std::size_t>(i)]) / stride[static_cast<std::size_t>(i)] + 1;
    }
    const Vol5 ov{in.n, in.c, od[0], od[1], od[2]};
    const std::size_t out_n = static_cast<std::size_t>(ov.n) * ov.c * ov.spatial();
    Buffer<Real> out(out_n);
    std::vector<std::size_t> arg(out_n);
    const Real* x = input.values().data();

    std::size_t o = 0;
    for (int nc = 0; nc < in.n * in.c; ++nc) {
        const std::size_t base = static_cast<std::size_t>(nc) * in.spatial();
        for (int z = 0; z < ov.d; ++z)
            for (int y = 0; y < ov.h; ++y)
                for (int xo = 0; xo < ov.w; ++xo, ++o) {
                    std::size_t best_i = base + (static_cast<std::size_t>(z * stride[0]) * in.h + y * stride[1]) * in.w +
                                         static_cast<std::size_t>(xo * stride[2]);
                    Real best = x[best_i];
                    for (int kz = 0; kz < kernel[0]; ++kz)
                        for (int ky = 0; ky < kernel[1]; ++ky) {
                            const std::size_t row = base + (static_cast<std::size_t>(z * stride[0] + kz) * in.h +
                                                            static_cast<std::size_t>(y * stride[1] + ky)) * in.w;
                            for (int kx = 0; kx < kernel[2]; ++kx) {
                                const std::size_t i = row + static_cast<std::size_t>(xo * stride[2] + kx);
                                if (x[i] > best) {
                                    best = x[i];
                                    best_i = i;
                                }
                            }
                        }
                    out[o] = best;
                    arg[o] = best_i;
                }
    }

    Tensor<Real> result(shape_of(ov, spatial_rank), std::move(out));
    Tape<Real>* tape = detail::recording_tape<Real>({&input});
    if (!tape) return result;
    auto xn = input.node();
    auto yn = result.node();
    tape->record({xn}, yn, [xn, yn, arg = std::move(arg)]() {
        auto dx = detail::grad_of(*xn);
        const auto& dy = yn->grad;
        for (std::size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += dy[i];
    });
    return result;
}

template <typename Real>
Tensor<Real> conv_transpose_nd(const Tensor<Real>& input, const Tensor<Real>& weight, Int3 stride, int spatial_rank,
                               const char* op) {
    const Vol5 in = as_vol5(input.shape(), spatial_rank, op, "input");
    const Vol5 wt = as_vol5(weight.shape(), spatial_rank, op, "weight");
    if (wt.n != in.c)
        fail(ErrorCode::ShapeMismatch, std::string(op) + ": weight expects " + std::to_string(wt.n) +
                                           " input channels, input has " + std::to_string(in.c));
    if (wt.d != stride[0] || wt.h != stride[1] || wt.w != stride[2])
        fail(ErrorCode::ShapeMismatch, std::string(op) + ": kernel must equal stride");
    const int kd = stride[0], kh = stride[1], kw = stride[2];
    const int co = wt.c;
    const std::size_t kvol = static_cast<std::size_t>(kd) * kh * kw;
    const auto M = static_cast<Eigen::Index>(static_cast<std::size_t>(co) * kvol);
    const std::size_t pin = in.spatial();
    const Vol5 ov{in.n, co, in.d * kd, in.h * kh, in.w * kw};
    const std::size_t pout = ov.spatial();

    Buffer<Real> out(static_cast<std::size_t>(ov.n) * co * pout);
    CMapR<Real> wm(weight.values().data(), in.c, M);
    MatR<Real> tmp(M, static_cast<Eigen::Index>(pin));

    // (co, a, b, c) tap of input voxel (z, y, x) lands at (z*kd+a, y*kh+b, x*kw+c).
    auto out_index = [&](int c, int a, int b, int cc, int z, int y, int x) {
        return ((static_cast<std::size_t>(c) * ov.d + static_cast<std::size_t>(z * kd + a)) * ov.h +
                static_cast<std::size_t>(y * kh + b)) * ov.w + static_cast<std::size_t>(x * kw + cc);
    };

    for (int n = 0; n < in.n; ++n) {
        const Real* xn = input.values().data() + static_cast<std::size_t>(n) * in.c * pin;
        tmp.noalias() = wm.transpose() * CMapR<Real>(xn, in.c, static_cast<Eigen::Index>(pin));
        Real* yn = out.data() + static_cast<std::size_t>(n) * co * pout;
        for (int c = 0; c < co; ++c)
            for (int a = 0; a < kd; ++a)
                for (int b = 0; b < kh; ++b)
                    for (int cc = 0; cc < kw; ++cc) {
                        const Real* row = tmp.data() + (static_cast<std::size_t>(c) * kvol +
                                                        static_cast<std::size_t>((a * kh + b) * kw + cc)) * pin;
                        std::size_t p = 0;
                        for (int z = 0; z < in.d; ++z)
                            for (int y = 0; y < in.h; ++y)
                                for (int x = 0; x < in.w; ++x, ++p) yn[out_index(c, a, b, cc, z, y, x)] = row[p];
                    }
    }
    detail::check_finite<Real>(out, op);

    Tensor<Real> result(shape_of(ov, spatial_rank), std::move(out));
    Tape<Real>* tape = detail::recording_tape<Real>({&input, &weight});
    if (!tape) return result;
    auto xn_ = input.node();
    auto wn_ = weight.node();
    auto yn_ = result.node();
    tape->record({xn_, wn_}, yn_, [=]() {
        const bool need_dx = xn_->requires_grad;
        const bool need_dw = wn_->requires_grad;
        CMapR<Real> wmat(wn_->values.data(), in.c, M);
        MatR<Real> dtmp(M, static_cast<Eigen::Index>(pin));
        for (int n = 0; n < in.n; ++n) {
            const Real* dyn = yn_->grad.data() + static_cast<std::size_t>(n) * co * pout;
            for (int c = 0; c < co; ++c)
                for (int a = 0; a < kd; ++a)
                    for (int b = 0; b < kh; ++b)
                        for (int cc = 0; cc < kw; ++cc) {
                            Real* row = dtmp.data() + (static_cast<std::size_t>(c) * kvol +
                                                       static_cast<std::size_t>((a * kh + b) * kw + cc)) * pin;
                            std::size_t p = 0;
                            for (int z = 0; z < in.d; ++z)
                                for (int y = 0; y < in.h; ++y)
                                    for (int x = 0; x < in.w; ++x, ++p) {
                                        const std::size_t oi =
                                            ((static_cast<std::size_t>(c) * ov.d + static_cast<std::size_t>(z * kd + a)) * ov.h +
                                             static_cast<std::size_t>(y * kh + b)) * ov.w + static_cast<std::size_t>(x * kw + cc);
                                        row[p] = dyn[oi];
                                    }
                        }
            const std::size_t xoff = static_cast<std::size_t>(n) * in.c * pin;
            if (need_dx)
                MapR<Real>(detail::grad_of(*xn_).data() + xoff, in.c, static_cast<Eigen::Index>(pin)).noalias() +=
                    wmat * dtmp;
            if (need_dw)
                MapR<Real>(detail::grad_of(*wn_).data(), in.c, M).noalias() +=
                    CMapR<Real>(xn_->values.data() + xoff, in.c, static_cast<Eigen::Index>(pin)) * dtmp.transpose();
        }
    });
    return result;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) fail(ErrorCode::ShapeMismatch, std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) + " differ");
}

} // namespace

// ---------------------------------------------------------------------------
// Public ops
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> conv3d(const Tensor<Real>& input, const Tensor<Real>& weight, const Tensor<Real>& bias, Int3 stride,
                    Int3 padding) {
    return conv_nd(input, weight, bias, stride, padding, 3, "conv3d");
}

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight, const Tensor<Real>& bias, Int2 stride,
                    Int2 padding) {
    return conv_nd(input, weight, bias, {1, stride[0], stride[1]}, {0, padding[0], padding[1]}, 2, "conv2d");
}

template <typename Real>
Tensor<Real> max_pool3d(const Tensor<Real>& input, Int3 kernel, Int3 stride) {
    return max_pool_nd(input, kernel, stride, 3, "max_pool3d");
}

template <typename Real>
Tensor<Real> max_pool2d(const Tensor<Real>& input, Int2 kernel, Int2 stride) {
    return max_pool_nd(input, {1, kernel[0], kernel[1]}, {1, stride[0], stride[1]}, 2, "max_pool2d");
}

template <typename Real>
Tensor<Real> conv_transpose3d(const Tensor<Real>& input, const Tensor<Real>& weight, Int3 stride) {
    return conv_transpose_nd(input, weight, stride, 3, "conv_transpose3d");
}

template <typename Real>
Tensor<Real> conv_transpose2d(const Tensor<Real>& input, const Tensor<Real>& weight, Int2 stride) {
    return conv_transpose_nd(input, weight, {1, stride[0], stride[1]}, 2, "conv_transpose2d");
}

template <typename Real>
Tensor<Real> mean_depth_taps(const Tensor<Real>& weight) {
    const Vol5 w = as_vol5(weight.shape(), 3, "mean_depth_taps", "weight");
    const std::size_t plane = static_cast<std::size_t>(w.h) * w.w;
    const std::size_t outer = static_cast<std::size_t>(w.n) * w.c;
    const Real scale = Real(1) / static_cast<Real>(w.d);
    Buffer<Real> out(outer * plane, Real(0));
    const Real* src = weight.values().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (int a = 0; a < w.d; ++a)
            for (std::size_t p = 0; p < plane; ++p) out[o * plane + p] += src[(o * w.d + a) * plane + p];
    for (Real& v : out) v *= scale;

    Tensor<Real> result({w.n, w.c, 1, w.h, w.w}, std::move(out));
    Tape<Real>* tape = detail::recording_tape<Real>({&weight});
    if (!tape) return result;
    auto xn = weight.node();
    auto yn = result.node();
    tape->record({xn}, yn, [=]() {
        auto dx = detail::grad_of(*xn);
        for (std::size_t o = 0; o < outer; ++o)
            for (int a = 0; a < w.d; ++a)
                for (std::size_t p = 0; p < plane; ++p) dx[(o * w.d + a) * plane + p] += yn->grad[o * plane + p] * scale;
    });
    return result;
}

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    bool ok = sa.size() == sb.size() && sa.size() >= 2 && sa[0] == sb[0];
    for (std::size_t i = 2; ok && i < sa.size(); ++i) ok = sa[i] == sb[i];
    if (!ok) fail(ErrorCode::ShapeMismatch, "concat_channels: " + shape_string(sa) + " vs " + shape_string(sb));

    std::size_t inner = 1;
    for (std::size_t i = 2; i < sa.size(); ++i) inner *= static_cast<std::size_t>(sa[i]);
    const std::size_t na = static_cast<std::size_t>(sa[1]) * inner;
    const std::size_t nb = static_cast<std::size_t>(sb[1]) * inner;
    const int batches = sa[0];
    Buffer<Real> out;
    out.reserve(static_cast<std::size_t>(batches) * (na + nb));
    for (int n = 0; n < batches; ++n) {
        const auto av = a.values().subspan(static_cast<std::size_t>(n) * na, na);
        const auto bv = b.values().subspan(static_cast<std::size_t>(n) * nb, nb);
        out.insert(out.end(), av.begin(), av.end());
        out.insert(out.end(), bv.begin(), bv.end());
    }
    Shape s = sa;
    s[1] = sa[1] + sb[1];
    Tensor<Real> result(std::move(s), std::move(out));
    Tape<Real>* tape = detail::recording_tape<Real>({&a, &b});
    if (!tape) return result;
    auto an = a.node();
    auto bn = b.node();
    auto yn = result.node();
    tape->record({an, bn}, yn, [=]() {
        const bool ga = an->requires_grad, gb = bn->requires_grad;
        std::span<Real> da = ga ? detail::grad_of(*an) : std::span<Real>{};
        std::span<Real> dbv = gb ? detail::grad_of(*bn) : std::span<Real>{};
        for (int n = 0; n < batches; ++n) {
            const Real* dy = yn->grad.data() + static_cast<std::size_t>(n) * (na + nb);
            if (ga)
                for (std::size_t i = 0; i < na; ++i) da[static_cast<std::size_t>(n) * na + i] += dy[i];
            if (gb)
                for (std::size_t i = 0; i < nb; ++i) dbv[static_cast<std::size_t>(n) * nb + i] += dy[na + i];
        }
    });
    return result;
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_same_shape(a.shape(), b.shape(), "pointwise_sum");
    Buffer<Real> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    detail::check_finite<Real>(out, "pointwise_sum");
    Tensor<Real> result(a.shape(), std::move(out));
    Tape<Real>* tape = detail::recording_tape<Real>({&a, &b});
    if (!tape) return result;
    auto an = a.node();
    auto bn = b.node();
    auto yn = result.node();
    tape->record({an, bn}, yn, [=]() {
        for (auto* node : {an.get(), bn.get()}) {
            if (!node->requires_grad) continue;
            auto d = detail::grad_of(*node);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += yn->grad[i];
        }
    });
    return result;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Buffer<Real> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    detail::check_finite<Real>(out, "mul");
    Tensor<Real> result(a.shape(), std::move(out));
    Tape<Real>* tape = detail::recording_tape<Real>({&a, &b});
    if (!tape) return result;
    auto an = a.node();
    auto bn = b.node();
    auto yn = result.node();
    tape->record({an, bn}, yn, [=]() {
        if (an->requires_grad) {
            auto d = detail::grad_of(*an);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += yn->grad[i] * bn->values[i];
        }
        if (bn->requires_grad) {
            auto d = detail::grad_of(*bn);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += yn->grad[i] * an->values[i];
        }
    });
    return result;
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
    Buffer<Real> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > Real(0) ? x.values()[i] : Real(0);
    Tensor<Real> result(x.shape(), std::move(out));
    Tape<Real>* tape = detail::recording_tape<Real>({&x});
    if (!tape) return result;
    auto xn = x.node();
    auto yn = result.node();
    tape->record({xn}, yn, [=]() {
        auto d = detail::grad_of(*xn);
        for (std::size_t i = 0; i < d.size(); ++i)
            if (xn->values[i] > Real(0)) d[i] += yn->grad[i];
    });
    return result;
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
    Buffer<Real> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Real v = x.values()[i];
        if (v >= Real(0)) {
            out[i] = Real(1) / (Real(1) + std::exp(-v));
        } else {
            const Real e = std::exp(v);
            out[i] = e / (Real(1) + e);
        }
    }
    Tensor<Real> result(x.shape(), std::move(out));
    Tape<Real>* tape = detail::recording_tape<Real>({&x});
    if (!tape) return result;
    auto xn = x.node();
    auto yn = result.node();
    tape->record({xn}, yn, [=]() {
        auto d = detail::grad_of(*xn);
        for (std::size_t i = 0; i < d.size(); ++i) {
            const Real s = yn->values[i];
            d[i] += yn->grad[i] * s * (Real(1) - s);
        }
    });
    return result;
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
    Real total = 0;
    for (Real v : x.values()) total += v;
    Tensor<Real> result = Tensor<Real>::scalar(total);
    Tape<Real>* tape = detail::recording_tape<Real>({&x});
    if (!tape) return result;
    auto xn = x.node();
    auto yn = result.node();
    tape->record({xn}, yn, [=]() {
        auto d = detail::grad_of(*xn);
        for (Real& v : d) v += yn->grad[0];
    });
    return result;
}

template <typename Real>
Tensor<Real> bce_with_logits(const Tensor<Real>& logits, const Tensor<Real>& targets) {
    require_same_shape(logits.shape(), targets.shape(), "bce_with_logits");
    const std::size_t n = logits.numel();
    if (n == 0) fail(ErrorCode::EmptyOutput, "bce_with_logits on an empty tensor");
    Real total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Real z = logits.values()[i];
        const Real t = targets.values()[i];
        if (t != Real(0) && t != Real(1)) fail(ErrorCode::NonBinaryTarget, "bce_with_logits targets must be 0 or 1");
        total += std::max(z, Real(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    Tensor<Real> result = Tensor<Real>::scalar(total / static_cast<Real>(n));
    detail::check_finite<Real>(result.values(), "bce_with_logits");
    Tape<Real>* tape = detail::recording_tape<Real>({&logits});
    if (!tape) return result;
    auto zn = logits.node();
    auto tn = targets.node();
    auto yn = result.node();
    tape->record({zn, tn}, yn, [=]() {
        auto d = detail::grad_of(*zn);
        const Real scale = yn->grad[0] / static_cast<Real>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Real z = zn->values[i];
            Real s;
            if (z >= Real(0)) {
                s = Real(1) / (Real(1) + std::exp(-z));
            } else {
                const Real e = std::exp(z);
                s = e / (Real(1) + e);
            }
            d[i] += (s - tn->values[i]) * scale;
        }
    });
    return result;
}

#define DENDSEG_INSTANTIATE(Real)                                                                          \
    template Tensor<Real> conv3d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, Int3, Int3); \
    template Tensor<Real> conv2d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, Int2, Int2); \
    template Tensor<Real> max_pool3d(const Tensor<Real>&, Int3, Int3);                                     \
    template Tensor<Real> max_pool2d(const Tensor<Real>&, Int2, Int2);                                     \
    template Tensor<Real> conv_transpose3d(const Tensor<Real>&, const Tensor<Real>&, Int3);                \
    template Tensor<Real> conv_transpose2d(const Tensor<Real>&, const Tensor<Real>&, Int2);                \
    template Tensor<Real> mean_depth_taps(const Tensor<Real>&);                                            \
    template Tensor<Real> concat_channels(const Tensor<Real>&, const Tensor<Real>&);                       \
    template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                                   \
    template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                                   \
    template Tensor<Real> relu(const Tensor<Real>&);                                                       \
    template Tensor<Real> sigmoid(const Tensor<Real>&);                                                    \
    template Tensor<Real> sum(const Tensor<Real>&);                                                        \
    template Tensor<Real> bce_with_logits(const Tensor<Real>&, const Tensor<Real>&);

DENDSEG_INSTANTIATE(float)
DENDSEG_INSTANTIATE(double)

#undef DENDSEG_INSTANTIATE

} // namespace dendseg

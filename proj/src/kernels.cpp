#include "panolab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "panolab/error.hpp"
#include "panolab/exact_sum.hpp"

namespace panolab::kernels {

int thread_count()
{
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void check_conv2d(const Shape& x, const Shape& k, const VideoTensor* bias, int stride, PadMode pad)
{
    if (stride != 1 && stride != 2)
        throw ArgumentError("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
    if (k.frames != 1 || k.height != k.width || k.height % 2 == 0)
        throw ShapeError("conv2d: kernel " + k.str() + " must be (C_out, C_in, 1, k, k) with k odd");
    if (k.channels != x.channels)
        throw ShapeError("conv2d: input " + x.str() + " does not match kernel " + k.str());
    if (x.height % stride != 0 || x.width % stride != 0)
        throw ShapeError("conv2d: input " + x.str() + " not divisible by stride " +
                         std::to_string(stride));
    if (pad == PadMode::circular && x.width < k.width)
        throw ShapeError("conv2d: circular padding needs width >= kernel size, input " + x.str() +
                         " kernel " + k.str());
    if (bias && bias->numel() != static_cast<std::size_t>(k.batch))
        throw ShapeError("conv2d: bias " + bias->shape().str() + " does not match kernel " + k.str());
}

void check_temporal(const Shape& x, const Shape& k, const VideoTensor* bias)
{
    if (k.height != 1 || k.width != 1 || k.frames % 2 == 0)
        throw ShapeError("temporal conv: kernel " + k.str() + " must be (C_out, C_in, kt, 1, 1), kt odd");
    if (k.channels != x.channels)
        throw ShapeError("temporal conv: input " + x.str() + " does not match kernel " + k.str());
    if (bias && bias->numel() != static_cast<std::size_t>(k.batch))
        throw ShapeError("temporal conv: bias " + bias->shape().str() + " does not match kernel " +
                         k.str());
}

namespace {

// Copy of x with `p` zero rows above/below and `p` zero or wrapped columns left/right.
std::vector<float> pad_planes(const VideoTensor& x, int p, PadMode pad)
{
    const Shape& s = x.shape();
    const int hp = s.height + 2 * p;
    const int wp = s.width + 2 * p;
    const std::size_t planes = static_cast<std::size_t>(s.batch) * s.channels * s.frames;
    // slack so fixed-width column chunks may read past the last row
    std::vector<float> out(planes * hp * wp + 64, 0.0f);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(planes); ++i) {
        const float* src = x.raw() + i * s.plane();
        float* dst = out.data() + i * static_cast<std::size_t>(hp) * wp;
        for (int y = 0; y < s.height; ++y) {
            const float* in = src + static_cast<std::size_t>(y) * s.width;
            float* row = dst + static_cast<std::size_t>(y + p) * wp;
            for (int x0 = 0; x0 < s.width; ++x0)
                row[p + x0] = in[x0];
            if (pad == PadMode::circular) {
                for (int j = 0; j < p; ++j) {
                    row[j] = in[s.width - p + j];
                    row[p + s.width + j] = in[j];
                }
            }
        }
    }
    return out;
}

// Sum padded-plane gradients back onto the unpadded plane, visiting padded
// cells in row-major order.
void fold_padded(const float* gp, int h, int w, int p, PadMode pad, float* gx)
{
    const int wp = w + 2 * p;
    for (int i = 0; i < h * w; ++i)
        gx[i] = 0.0f;
    for (int yy = p; yy < p + h; ++yy) {
        const float* row = gp + static_cast<std::size_t>(yy) * wp;
        float* out = gx + static_cast<std::size_t>(yy - p) * w;
        if (pad == PadMode::circular) {
            for (int xx = 0; xx < wp; ++xx) {
                int x = xx - p;
                if (x < 0)
                    x += w;
                else if (x >= w)
                    x -= w;
                out[x] += row[xx];
            }
        } else {
            for (int x = 0; x < w; ++x)
                out[x] += row[x + p];
        }
    }
}

constexpr int conv_cb = 4;
constexpr int conv_xb = 16;

using v8f = float __attribute__((vector_size(32)));

template <int S>
inline v8f load_cols(const float* p) noexcept
{
    if constexpr (S == 1) {
        v8f v;
        std::memcpy(&v, p, sizeof v);
        return v;
    } else {
        return v8f{p[0], p[2], p[4], p[6], p[8], p[10], p[12], p[14]};
    }
}

// Broadcast without arithmetic, so a -0 bias stays -0.
inline v8f splat(float v) noexcept { return v8f{v, v, v, v, v, v, v, v}; }

struct ConvGeometry {
    int cin, k, hp, wp, frames;
};

// One 4-channel x 16-column output tile. `in` points at channel 0 of the
// padded (b, f) input; channel planes are frames * hp * wp apart.
template <int S>
inline void conv_block(const ConvGeometry& g, const float* in, const float* wb, const float* init, int y, int x0,
                       float (&out)[conv_cb][conv_xb]) noexcept
{
    v8f acc[conv_cb][2];
    for (int c = 0; c < conv_cb; ++c)
        acc[c][0] = acc[c][1] = splat(init[c]);
    const std::size_t cstride = static_cast<std::size_t>(g.frames) * g.hp * g.wp;
    for (int ci = 0; ci < g.cin; ++ci) {
        const float* plane = in + ci * cstride;
        for (int ky = 0; ky < g.k; ++ky) {
            const float* row = plane + static_cast<std::size_t>(y * S + ky) * g.wp + x0 * S;
            for (int kx = 0; kx < g.k; ++kx, wb += conv_cb) {
                const v8f lo = load_cols<S>(row + kx);
                const v8f hi = load_cols<S>(row + kx + 8 * S);
                for (int c = 0; c < conv_cb; ++c) {
                    acc[c][0] += wb[c] * lo;
                    acc[c][1] += wb[c] * hi;
                }
            }
        }
    }
    for (int c = 0; c < conv_cb; ++c) {
        std::memcpy(out[c], &acc[c][0], sizeof(v8f));
        std::memcpy(out[c] + 8, &acc[c][1], sizeof(v8f));
    }
}

// Stride-1 input gradient as a forward convolution of the gradient, bordered
// by k-1 zeros, with the kernel transposed and flipped. Every padded cell then
// sums in (co, ky descending, kx descending) order, which is the order the
// scatter path and the reference use. Border terms are +-0 and leave a running
// sum untouched.
void conv_grad_input_stride1(const VideoTensor& kernel, const VideoTensor& grad_out, PadMode pad, VideoTensor& gx)
{
    const Shape& s = gx.shape();
    const int cin = s.channels;
    const int cout = kernel.shape().batch;
    const int k = kernel.shape().width;
    const int p = k / 2;
    const int h = s.height, w = s.width;
    const int hp = h + 2 * p, wp = w + 2 * p;
    const int e = k - 1;
    const int gh = h + 2 * e, gw = w + 2 * e;
    const std::size_t gplane = static_cast<std::size_t>(gh) * gw;

    const int blocks = (cin + conv_cb - 1) / conv_cb;
    const int taps = cout * k * k;
    std::vector<float> wpack(static_cast<std::size_t>(blocks) * taps * conv_cb, 0.0f);
    for (int ci = 0; ci < cin; ++ci)
        for (int co = 0; co < cout; ++co)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const int r = (co * k + ky) * k + kx;
                    wpack[(static_cast<std::size_t>(ci / conv_cb) * taps + r) * conv_cb + ci % conv_cb] =
                        kernel.raw()[((static_cast<std::size_t>(co) * cin + ci) * k + (k - 1 - ky)) * k + (k - 1 - kx)];
                }
    const ConvGeometry geo{cout, k, gh, gw, 1};
    const float zero[conv_cb] = {};

#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < s.batch; ++b) {
        for (int f = 0; f < s.frames; ++f) {
            std::vector<float> gpad(static_cast<std::size_t>(cout) * gplane + 64, 0.0f);
            for (int co = 0; co < cout; ++co) {
                const float* g = grad_out.plane(b, co, f);
                float* dst = gpad.data() + co * gplane;
                for (int y = 0; y < h; ++y)
                    std::memcpy(dst + static_cast<std::size_t>(y + e) * gw + e, g + static_cast<std::size_t>(y) * w,
                                sizeof(float) * w);
            }
            std::vector<float> gp(static_cast<std::size_t>(conv_cb) * hp * wp);
            for (int blk = 0; blk < blocks; ++blk) {
                const int ci0 = blk * conv_cb;
                const int nc = std::min(conv_cb, cin - ci0);
                const float* wb = wpack.data() + static_cast<std::size_t>(blk) * taps * conv_cb;
                // rows outside [p, p + h) hold vertical padding only; the fold drops them
                for (int yy = p; yy < p + h; ++yy) {
                    for (int x0 = 0; x0 < wp; x0 += conv_xb) {
                        float acc[conv_cb][conv_xb];
                        conv_block<1>(geo, gpad.data(), wb, zero, yy, x0, acc);
                        const int nx = std::min(conv_xb, wp - x0);
                        for (int c = 0; c < nc; ++c)
                            std::memcpy(gp.data() + (static_cast<std::size_t>(c) * hp + yy) * wp + x0, acc[c],
                                        sizeof(float) * nx);
                    }
                }
                for (int c = 0; c < nc; ++c)
                    fold_padded(gp.data() + static_cast<std::size_t>(c) * hp * wp, h, w, p, pad,
                                gx.plane(b, ci0 + c, f));
            }
        }
    }
}

// All nine taps of one (co, ci) kernel gradient in a single sweep. Each tap
// keeps its own float partial per plane and double lane per column, exactly
// as the generic path does one tap at a time.
void conv3x3_grad_kernel_pair(const float* xp, const VideoTensor& grad_out, int co, int ci, int cin, int frames,
                              int batch, int wp, std::size_t pplane, float* out)
{
    const int ho = grad_out.shape().height;
    const int wo = grad_out.shape().width;
    std::vector<double> lanes(static_cast<std::size_t>(9) * wo, 0.0);
    std::vector<float> part(static_cast<std::size_t>(9) * wo);
    for (int b = 0; b < batch; ++b) {
        for (int f = 0; f < frames; ++f) {
            const float* g = grad_out.plane(b, co, f);
            const float* in = xp + ((static_cast<std::size_t>(b) * cin + ci) * frames + f) * pplane;
            for (auto& v : part)
                v = 0.0f;
            for (int y = 0; y < ho; ++y) {
                const float* grow = g + static_cast<std::size_t>(y) * wo;
                for (int t = 0; t < 9; ++t) {
                    const float* row = in + static_cast<std::size_t>(y + t / 3) * wp + t % 3;
                    float* pt = part.data() + static_cast<std::size_t>(t) * wo;
                    for (int xo = 0; xo < wo; ++xo)
                        pt[xo] += grow[xo] * row[xo];
                }
            }
            for (std::size_t i = 0; i < lanes.size(); ++i)
                lanes[i] += part[i];
        }
    }
    for (int t = 0; t < 9; ++t) {
        double total = 0.0;
        for (int xo = 0; xo < wo; ++xo)
            total += lanes[static_cast<std::size_t>(t) * wo + xo];
        out[t] = static_cast<float>(total);
    }
}

} // namespace

VideoTensor conv2d_forward(const VideoTensor& x, const VideoTensor& kernel, const VideoTensor* bias,
                           int stride, PadMode pad)
{
    const Shape& s = x.shape();
    const Shape& ks = kernel.shape();
    check_conv2d(s, ks, bias, stride, pad);
    const int k = ks.width;
    const int p = k / 2;
    const int hp = s.height + 2 * p;
    const int wp = s.width + 2 * p;
    const int ho = s.height / stride;
    const int wo = s.width / stride;
    const int cin = s.channels;
    const int cout = ks.batch;

    const std::vector<float> xp = pad_planes(x, p, pad);
    VideoTensor out(Shape{s.batch, cout, s.frames, ho, wo});
    const float* w = kernel.raw();

    // Blocks of 4 output channels x 16 output columns live in registers; each
    // element still accumulates bias, then (ci, ky, kx) in order.
    const int co_blocks = (cout + conv_cb - 1) / conv_cb;
    const int taps = cin * k * k;
    // weights packed as [block][ci, ky, kx][conv_cb], zero beyond cout
    std::vector<float> wpack(static_cast<std::size_t>(co_blocks) * taps * conv_cb, 0.0f);
    for (int co = 0; co < cout; ++co)
        for (int r = 0; r < taps; ++r)
            wpack[(static_cast<std::size_t>(co / conv_cb) * taps + r) * conv_cb + co % conv_cb] =
                w[static_cast<std::size_t>(co) * taps + r];
    const ConvGeometry geo{cin, k, hp, wp, s.frames};
#pragma omp parallel for collapse(3) schedule(static)
    for (int b = 0; b < s.batch; ++b) {
        for (int f = 0; f < s.frames; ++f) {
            for (int cb = 0; cb < co_blocks; ++cb) {
                const int co0 = cb * conv_cb;
                const int nc = std::min(conv_cb, cout - co0);
                float init[conv_cb] = {};
                for (int c = 0; c < nc; ++c)
                    init[c] = bias ? bias->raw()[co0 + c] : 0.0f;
                const float* wb = wpack.data() + static_cast<std::size_t>(cb) * taps * conv_cb;
                const float* in = xp.data() + (static_cast<std::size_t>(b) * cin * s.frames + f) * hp * wp;
                for (int y = 0; y < ho; ++y) {
                    for (int x0 = 0; x0 < wo; x0 += conv_xb) {
                        float acc[conv_cb][conv_xb];
                        if (stride == 1)
                            conv_block<1>(geo, in, wb, init, y, x0, acc);
                        else
                            conv_block<2>(geo, in, wb, init, y, x0, acc);
                        const int nx = std::min(conv_xb, wo - x0);
                        for (int c = 0; c < nc; ++c) {
                            float* o = out.plane(b, co0 + c, f) + static_cast<std::size_t>(y) * wo + x0;
                            for (int j = 0; j < nx; ++j)
                                o[j] = acc[c][j];
                        }
                    }
                }
            }
        }
    }
    return out;
}

void conv2d_backward(const VideoTensor& x, const VideoTensor& kernel, int stride, PadMode pad,
                     const VideoTensor& grad_out, GradTargets grads)
{
    const Shape& s = x.shape();
    const Shape& ks = kernel.shape();
    check_conv2d(s, ks, nullptr, stride, pad);
    const int k = ks.width;
    const int p = k / 2;
    const int hp = s.height + 2 * p;
    const int wp = s.width + 2 * p;
    const int ho = s.height / stride;
    const int wo = s.width / stride;
    const int cin = s.channels;
    const int cout = ks.batch;
    require_same_shape(grad_out.shape(), Shape{s.batch, cout, s.frames, ho, wo}, "conv2d backward");
    const std::size_t pplane = static_cast<std::size_t>(hp) * wp;

    if (grads.bias) {
        *grads.bias = VideoTensor(Shape{cout, 1, 1, 1, 1});
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout; ++co) {
            std::vector<double> lanes(wo, 0.0);
            for (int b = 0; b < s.batch; ++b)
                for (int f = 0; f < s.frames; ++f) {
                    const float* g = grad_out.plane(b, co, f);
                    for (int y = 0; y < ho; ++y)
                        for (int xo = 0; xo < wo; ++xo)
                            lanes[xo] += g[y * wo + xo];
                }
            double total = 0.0;
            for (double l : lanes)
                total += l;
            grads.bias->raw()[co] = static_cast<float>(total);
        }
    }

    if (!grads.kernel && !grads.input)
        return;
    const std::vector<float> xp = pad_planes(x, p, pad);

    if (grads.kernel) {
        *grads.kernel = VideoTensor(ks);
#pragma omp parallel for collapse(2) schedule(static)
        for (int co = 0; co < cout; ++co) {
            for (int ci = 0; ci < cin; ++ci) {
                if (k == 3 && stride == 1) {
                    conv3x3_grad_kernel_pair(xp.data(), grad_out, co, ci, cin, s.frames, s.batch, wp, pplane,
                                             grads.kernel->raw() + (static_cast<std::size_t>(co) * cin + ci) * 9);
                    continue;
                }
                std::vector<double> lanes(wo);
                std::vector<float> part(wo);
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        for (auto& l : lanes)
                            l = 0.0;
                        for (int b = 0; b < s.batch; ++b) {
                            for (int f = 0; f < s.frames; ++f) {
                                const float* g = grad_out.plane(b, co, f);
                                const float* in = xp.data() +
                                    ((static_cast<std::size_t>(b) * cin + ci) * s.frames + f) * pplane;
                                for (auto& v : part)
                                    v = 0.0f;
                                for (int y = 0; y < ho; ++y) {
                                    const float* row = in + static_cast<std::size_t>(y * stride + ky) * wp + kx;
                                    const float* grow = g + static_cast<std::size_t>(y) * wo;
                                    if (stride == 1) {
                                        for (int xo = 0; xo < wo; ++xo)
                                            part[xo] += grow[xo] * row[xo];
                                    } else {
                                        for (int xo = 0; xo < wo; ++xo)
                                            part[xo] += grow[xo] * row[2 * xo];
                                    }
                                }
                                for (int xo = 0; xo < wo; ++xo)
                                    lanes[xo] += part[xo];
                            }
                        }
                        double total = 0.0;
                        for (double l : lanes)
                            total += l;
                        grads.kernel->raw()[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx] =
                            static_cast<float>(total);
                    }
                }
            }
        }
    }

    if (grads.input) {
        *grads.input = VideoTensor(s);
        const float* w = kernel.raw();
        if (stride == 1) {
            conv_grad_input_stride1(kernel, grad_out, pad, *grads.input);
            return;
        }
#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < s.batch; ++b) {
            for (int f = 0; f < s.frames; ++f) {
                std::vector<float> gp(pplane);
                for (int ci = 0; ci < cin; ++ci) {
                    for (auto& v : gp)
                        v = 0.0f;
                    for (int co = 0; co < cout; ++co) {
                        const float* g = grad_out.plane(b, co, f);
                        const float* wk = w + (static_cast<std::size_t>(co) * cin + ci) * k * k;
                        for (int ky = k - 1; ky >= 0; --ky) {
                            for (int kx = k - 1; kx >= 0; --kx) {
                                const float wv = wk[ky * k + kx];
                                for (int y = 0; y < ho; ++y) {
                                    float* row = gp.data() + static_cast<std::size_t>(y * stride + ky) * wp + kx;
                                    const float* grow = g + static_cast<std::size_t>(y) * wo;
                                    if (stride == 1) {
                                        for (int xo = 0; xo < wo; ++xo)
                                            row[xo] += wv * grow[xo];
                                    } else {
                                        for (int xo = 0; xo < wo; ++xo)
                                            row[2 * xo] += wv * grow[xo];
                                    }
                                }
                            }
                        }
                    }
                    fold_padded(gp.data(), s.height, s.width, p, pad, grads.input->plane(b, ci, f));
                }
            }
        }
    }
}

VideoTensor temporal_conv_forward(const VideoTensor& x, const VideoTensor& kernel,
                                  const VideoTensor* bias)
{
    const Shape& s = x.shape();
    const Shape& ks = kernel.shape();
    check_temporal(s, ks, bias);
    const int kt = ks.frames;
    const int pt = kt / 2;
    const int cin = s.channels;
    const int cout = ks.batch;
    const std::size_t hw = s.plane();
    VideoTensor out(Shape{s.batch, cout, s.frames, s.height, s.width});
    const float* w = kernel.raw();

#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < s.batch; ++b) {
        for (int f = 0; f < s.frames; ++f) {
            for (int co = 0; co < cout; ++co) {
                float* o = out.plane(b, co, f);
                const float init = bias ? bias->raw()[co] : 0.0f;
                for (std::size_t i = 0; i < hw; ++i)
                    o[i] = init;
                for (int ci = 0; ci < cin; ++ci) {
                    for (int t = 0; t < kt; ++t) {
                        const int ff = f + t - pt;
                        if (ff < 0 || ff >= s.frames)
                            continue;
                        const float wv = w[(static_cast<std::size_t>(co) * cin + ci) * kt + t];
                        const float* in = x.plane(b, ci, ff);
                        for (std::size_t i = 0; i < hw; ++i)
                            o[i] += wv * in[i];
                    }
                }
            }
        }
    }
    return out;
}

void temporal_conv_backward(const VideoTensor& x, const VideoTensor& kernel,
                            const VideoTensor& grad_out, GradTargets grads)
{
    const Shape& s = x.shape();
    const Shape& ks = kernel.shape();
    check_temporal(s, ks, nullptr);
    const int kt = ks.frames;
    const int pt = kt / 2;
    const int cin = s.channels;
    const int cout = ks.batch;
    const std::size_t hw = s.plane();
    require_same_shape(grad_out.shape(), Shape{s.batch, cout, s.frames, s.height, s.width},
                       "temporal conv backward");

    if (grads.bias) {
        *grads.bias = VideoTensor(Shape{cout, 1, 1, 1, 1});
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout; ++co) {
            std::vector<double> lanes(hw, 0.0);
            for (int b = 0; b < s.batch; ++b)
                for (int f = 0; f < s.frames; ++f) {
                    const float* g = grad_out.plane(b, co, f);
                    for (std::size_t i = 0; i < hw; ++i)
                        lanes[i] += g[i];
                }
            double total = 0.0;
            for (double l : lanes)
                total += l;
            grads.bias->raw()[co] = static_cast<float>(total);
        }
    }

    if (grads.kernel) {
        *grads.kernel = VideoTensor(ks);
#pragma omp parallel for collapse(2) schedule(static)
        for (int co = 0; co < cout; ++co) {
            for (int ci = 0; ci < cin; ++ci) {
                std::vector<double> lanes(hw);
                for (int t = 0; t < kt; ++t) {
                    for (auto& l : lanes)
                        l = 0.0;
                    for (int b = 0; b < s.batch; ++b) {
                        for (int f = 0; f < s.frames; ++f) {
                            const int ff = f + t - pt;
                            if (ff < 0 || ff >= s.frames)
                                continue;
                            const float* g = grad_out.plane(b, co, f);
                            const float* in = x.plane(b, ci, ff);
                            for (std::size_t i = 0; i < hw; ++i)
                                lanes[i] += static_cast<double>(g[i]) * static_cast<double>(in[i]);
                        }
                    }
                    double total = 0.0;
                    for (double l : lanes)
                        total += l;
                    grads.kernel->raw()[(static_cast<std::size_t>(co) * cin + ci) * kt + t] =
                        static_cast<float>(total);
                }
            }
        }
    }

    if (grads.input) {
        *grads.input = VideoTensor(s);
        const float* w = kernel.raw();
#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < s.batch; ++b) {
            for (int ff = 0; ff < s.frames; ++ff) {
                for (int ci = 0; ci < cin; ++ci) {
                    float* gx = grads.input->plane(b, ci, ff);
                    for (int co = 0; co < cout; ++co) {
                        for (int t = 0; t < kt; ++t) {
                            const int f = ff - t + pt;
                            if (f < 0 || f >= s.frames)
                                continue;
                            const float wv = w[(static_cast<std::size_t>(co) * cin + ci) * kt + t];
                            const float* g = grad_out.plane(b, co, f);
                            for (std::size_t i = 0; i < hw; ++i)
                                gx[i] += wv * g[i];
                        }
                    }
                }
            }
        }
    }
}

VideoTensor channel_norm_forward(const VideoTensor& x, const VideoTensor& gamma,
                                 const VideoTensor& beta, float eps, NormStats& stats)
{
    const Shape& s = x.shape();
    if (gamma.numel() != static_cast<std::size_t>(s.channels) || beta.numel() != gamma.numel())
        throw ShapeError("channel norm: input " + s.str() + " does not match scale " +
                         gamma.shape().str());
    const std::size_t n = static_cast<std::size_t>(s.frames) * s.plane();
    const int groups = s.batch * s.channels;
    stats.mean.assign(groups, 0.0);
    stats.rstd.assign(groups, 0.0);
    VideoTensor out(s);

#pragma omp parallel for schedule(static)
    for (int g = 0; g < groups; ++g) {
        const int c = g % s.channels;
        const std::span<const float> block(x.raw() + g * n, n);
        const double mean = exact_sum(block) / static_cast<double>(n);
        const double var =
            exact_sum(block, [mean](float v) { return (v - mean) * (v - mean); }) / static_cast<double>(n);
        const double rstd = 1.0 / std::sqrt(var + eps);
        stats.mean[g] = mean;
        stats.rstd[g] = rstd;
        const float gm = gamma.raw()[c];
        const float bt = beta.raw()[c];
        float* o = out.raw() + g * n;
        for (std::size_t i = 0; i < n; ++i) {
            const float xhat = static_cast<float>((block[i] - mean) * rstd);
            o[i] = xhat * gm + bt;
        }
    }
    return out;
}

void channel_norm_backward(const VideoTensor& x, const VideoTensor& gamma, const NormStats& stats,
                           const VideoTensor& grad_out, GradTargets grads)
{
    const Shape& s = x.shape();
    require_same_shape(grad_out.shape(), s, "channel norm backward");
    const std::size_t n = static_cast<std::size_t>(s.frames) * s.plane();
    const int groups = s.batch * s.channels;
    std::vector<double> dgamma(groups), dbeta(groups);
    if (grads.input)
        *grads.input = VideoTensor(s);

#pragma omp parallel for schedule(static)
    for (int g = 0; g < groups; ++g) {
        const int c = g % s.channels;
        const float* xs = x.raw() + g * n;
        const float* gy = grad_out.raw() + g * n;
        const double mean = stats.mean[g];
        const double rstd = stats.rstd[g];
        std::vector<float> xhat(n), ghat(n), gx(n);
        const float gm = gamma.raw()[c];
        for (std::size_t i = 0; i < n; ++i) {
            xhat[i] = static_cast<float>((xs[i] - mean) * rstd);
            ghat[i] = gy[i] * gm;
            gx[i] = gy[i] * xhat[i];
        }
        dgamma[g] = exact_sum(gx);
        dbeta[g] = exact_sum(std::span<const float>(gy, n));
        if (grads.input) {
            const double m1 = exact_sum(ghat) / static_cast<double>(n);
            const double m2 = exact_sum(gx) * gm / static_cast<double>(n);
            float* out = grads.input->raw() + g * n;
            for (std::size_t i = 0; i < n; ++i)
                out[i] = static_cast<float>((ghat[i] - m1 - xhat[i] * m2) * rstd);
        }
    }

    auto reduce = [&](const std::vector<double>& per_group, VideoTensor* target) {
        *target = VideoTensor(gamma.shape());
        for (int c = 0; c < s.channels; ++c) {
            double total = 0.0;
            for (int b = 0; b < s.batch; ++b)
                total += per_group[b * s.channels + c];
            target->raw()[c] = static_cast<float>(total);
        }
    };
    if (grads.kernel)
        reduce(dgamma, grads.kernel);
    if (grads.bias)
        reduce(dbeta, grads.bias);
}

VideoTensor silu_forward(const VideoTensor& x)
{
    VideoTensor out(x.shape());
    const float* in = x.raw();
    float* o = out.raw();
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.numel());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        o[i] = in[i] / (1.0f + std::exp(-in[i]));
    return out;
}

VideoTensor silu_backward(const VideoTensor& x, const VideoTensor& grad_out)
{
    require_same_shape(grad_out.shape(), x.shape(), "silu backward");
    VideoTensor out(x.shape());
    const float* in = x.raw();
    const float* g = grad_out.raw();
    float* o = out.raw();
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.numel());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const float sg = 1.0f / (1.0f + std::exp(-in[i]));
        o[i] = g[i] * sg * (1.0f + in[i] * (1.0f - sg));
    }
    return out;
}

} // namespace panolab::kernels

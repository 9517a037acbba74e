// Serial reference kernels: each output element is computed on its own with
// explicit bounds tests instead of padded buffers. Kept for testing the
// parallel kernels and for benchmarking against them.

#include <cmath>
#include <vector>

#include "panolab/error.hpp"
#include "panolab/exact_sum.hpp"
#include "panolab/kernels.hpp"

namespace panolab::kernels::reference {

namespace {

// Value of x at padded coordinates (yy, xx); `p` cells of padding on each side.
float padded_at(const VideoTensor& x, int b, int c, int f, int yy, int xx, int p, PadMode pad)
{
    const Shape& s = x.shape();
    const int y = yy - p;
    int col = xx - p;
    if (y < 0 || y >= s.height)
        return 0.0f;
    if (col < 0 || col >= s.width) {
        if (pad == PadMode::zeros)
            return 0.0f;
        col = (col + s.width) % s.width;
    }
    return x.at(b, c, f, y, col);
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
    VideoTensor out(Shape{s.batch, ks.batch, s.frames, s.height / stride, s.width / stride});
    const Shape& os = out.shape();
    for (int b = 0; b < os.batch; ++b)
        for (int co = 0; co < os.channels; ++co)
            for (int f = 0; f < os.frames; ++f)
                for (int y = 0; y < os.height; ++y)
                    for (int xo = 0; xo < os.width; ++xo) {
                        float acc = bias ? bias->raw()[co] : 0.0f;
                        for (int ci = 0; ci < s.channels; ++ci)
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx)
                                    acc += kernel.at(co, ci, 0, ky, kx) *
                                           padded_at(x, b, ci, f, y * stride + ky, xo * stride + kx, p, pad);
                        out.at(b, co, f, y, xo) = acc;
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
    const int ho = s.height / stride;
    const int wo = s.width / stride;
    const int cout = ks.batch;
    require_same_shape(grad_out.shape(), Shape{s.batch, cout, s.frames, ho, wo}, "conv2d backward");

    if (grads.bias) {
        *grads.bias = VideoTensor(Shape{cout, 1, 1, 1, 1});
        for (int co = 0; co < cout; ++co) {
            double total = 0.0;
            for (int xo = 0; xo < wo; ++xo) {
                double lane = 0.0;
                for (int b = 0; b < s.batch; ++b)
                    for (int f = 0; f < s.frames; ++f)
                        for (int y = 0; y < ho; ++y)
                            lane += grad_out.at(b, co, f, y, xo);
                total += lane;
            }
            grads.bias->raw()[co] = static_cast<float>(total);
        }
    }

    if (grads.kernel) {
        *grads.kernel = VideoTensor(ks);
        for (int co = 0; co < cout; ++co)
            for (int ci = 0; ci < s.channels; ++ci)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        double total = 0.0;
                        for (int xo = 0; xo < wo; ++xo) {
                            // float partial per plane, double across planes and lanes
                            double lane = 0.0;
                            for (int b = 0; b < s.batch; ++b)
                                for (int f = 0; f < s.frames; ++f) {
                                    float part = 0.0f;
                                    for (int y = 0; y < ho; ++y)
                                        part += grad_out.at(b, co, f, y, xo) *
                                                padded_at(x, b, ci, f, y * stride + ky, xo * stride + kx, p, pad);
                                    lane += part;
                                }
                            total += lane;
                        }
                        grads.kernel->at(co, ci, 0, ky, kx) = static_cast<float>(total);
                    }
    }

    if (grads.input) {
        *grads.input = VideoTensor(s);
        const int hp = s.height + 2 * p;
        const int wp = s.width + 2 * p;
        std::vector<float> gp(static_cast<std::size_t>(hp) * wp);
        for (int b = 0; b < s.batch; ++b)
            for (int ci = 0; ci < s.channels; ++ci)
                for (int f = 0; f < s.frames; ++f) {
                    // Gather into the padded plane, then fold back in row-major padded order.
                    for (int yy = 0; yy < hp; ++yy)
                        for (int xx = 0; xx < wp; ++xx) {
                            float acc = 0.0f;
                            for (int co = 0; co < cout; ++co)
                                for (int ky = k - 1; ky >= 0; --ky)
                                    for (int kx = k - 1; kx >= 0; --kx) {
                                        const int ys = yy - ky;
                                        const int xs = xx - kx;
                                        if (ys < 0 || xs < 0 || ys % stride || xs % stride)
                                            continue;
                                        const int y = ys / stride;
                                        const int xo = xs / stride;
                                        if (y >= ho || xo >= wo)
                                            continue;
                                        acc += kernel.at(co, ci, 0, ky, kx) * grad_out.at(b, co, f, y, xo);
                                    }
                            gp[static_cast<std::size_t>(yy) * wp + xx] = acc;
                        }
                    for (int yy = p; yy < p + s.height; ++yy)
                        for (int xx = 0; xx < wp; ++xx) {
                            int col = xx - p;
                            if (col < 0 || col >= s.width) {
                                if (pad == PadMode::zeros)
                                    continue;
                                col = (col + s.width) % s.width;
                            }
                            grads.input->at(b, ci, f, yy - p, col) += gp[static_cast<std::size_t>(yy) * wp + xx];
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
    VideoTensor out(Shape{s.batch, ks.batch, s.frames, s.height, s.width});
    for (int b = 0; b < s.batch; ++b)
        for (int co = 0; co < ks.batch; ++co)
            for (int f = 0; f < s.frames; ++f)
                for (int y = 0; y < s.height; ++y)
                    for (int xo = 0; xo < s.width; ++xo) {
                        float acc = bias ? bias->raw()[co] : 0.0f;
                        for (int ci = 0; ci < s.channels; ++ci)
                            for (int t = 0; t < kt; ++t) {
                                const int ff = f + t - pt;
                                if (ff < 0 || ff >= s.frames)
                                    continue;
                                acc += kernel.at(co, ci, t, 0, 0) * x.at(b, ci, ff, y, xo);
                            }
                        out.at(b, co, f, y, xo) = acc;
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
    const int cout = ks.batch;
    require_same_shape(grad_out.shape(), Shape{s.batch, cout, s.frames, s.height, s.width},
                       "temporal conv backward");

    if (grads.bias) {
        *grads.bias = VideoTensor(Shape{cout, 1, 1, 1, 1});
        for (int co = 0; co < cout; ++co) {
            double total = 0.0;
            for (int y = 0; y < s.height; ++y)
                for (int xo = 0; xo < s.width; ++xo) {
                    double lane = 0.0;
                    for (int b = 0; b < s.batch; ++b)
                        for (int f = 0; f < s.frames; ++f)
                            lane += grad_out.at(b, co, f, y, xo);
                    total += lane;
                }
            grads.bias->raw()[co] = static_cast<float>(total);
        }
    }

    if (grads.kernel) {
        *grads.kernel = VideoTensor(ks);
        for (int co = 0; co < cout; ++co)
            for (int ci = 0; ci < s.channels; ++ci)
                for (int t = 0; t < kt; ++t) {
                    double total = 0.0;
                    for (int y = 0; y < s.height; ++y)
                        for (int xo = 0; xo < s.width; ++xo) {
                            double lane = 0.0;
                            for (int b = 0; b < s.batch; ++b)
                                for (int f = 0; f < s.frames; ++f) {
                                    const int ff = f + t - pt;
                                    if (ff < 0 || ff >= s.frames)
                                        continue;
                                    lane += static_cast<double>(grad_out.at(b, co, f, y, xo)) *
                                            static_cast<double>(x.at(b, ci, ff, y, xo));
                                }
                            total += lane;
                        }
                    grads.kernel->at(co, ci, t, 0, 0) = static_cast<float>(total);
                }
    }

    if (grads.input) {
        *grads.input = VideoTensor(s);
        for (int b = 0; b < s.batch; ++b)
            for (int ci = 0; ci < s.channels; ++ci)
                for (int ff = 0; ff < s.frames; ++ff)
                    for (int y = 0; y < s.height; ++y)
                        for (int xo = 0; xo < s.width; ++xo) {
                            float acc = 0.0f;
                            for (int co = 0; co < cout; ++co)
                                for (int t = 0; t < kt; ++t) {
                                    const int f = ff - t + pt;
                                    if (f < 0 || f >= s.frames)
                                        continue;
                                    acc += kernel.at(co, ci, t, 0, 0) * grad_out.at(b, co, f, y, xo);
                                }
                            grads.input->at(b, ci, ff, y, xo) = acc;
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
    stats.mean.assign(static_cast<std::size_t>(s.batch) * s.channels, 0.0);
    stats.rstd.assign(stats.mean.size(), 0.0);
    VideoTensor out(s);
    for (int b = 0; b < s.batch; ++b)
        for (int c = 0; c < s.channels; ++c) {
            const std::size_t g = static_cast<std::size_t>(b) * s.channels + c;
            const std::span<const float> block(x.plane(b, c, 0), n);
            const double mean = exact_sum(block) / static_cast<double>(n);
            const double var =
                exact_sum(block, [mean](float v) { return (v - mean) * (v - mean); }) / static_cast<double>(n);
            const double rstd = 1.0 / std::sqrt(var + eps);
            stats.mean[g] = mean;
            stats.rstd[g] = rstd;
            for (std::size_t i = 0; i < n; ++i)
                out.plane(b, c, 0)[i] =
                    static_cast<float>((block[i] - mean) * rstd) * gamma.raw()[c] + beta.raw()[c];
        }
    return out;
}

void channel_norm_backward(const VideoTensor& x, const VideoTensor& gamma, const NormStats& stats,
                           const VideoTensor& grad_out, GradTargets grads)
{
    const Shape& s = x.shape();
    require_same_shape(grad_out.shape(), s, "channel norm backward");
    const std::size_t n = static_cast<std::size_t>(s.frames) * s.plane();
    if (grads.input)
        *grads.input = VideoTensor(s);
    std::vector<double> dgamma(s.channels, 0.0), dbeta(s.channels, 0.0);
    for (int b = 0; b < s.batch; ++b)
        for (int c = 0; c < s.channels; ++c) {
            const std::size_t g = static_cast<std::size_t>(b) * s.channels + c;
            const float gm = gamma.raw()[c];
            std::vector<float> xhat(n), ghat(n), gx(n);
            for (std::size_t i = 0; i < n; ++i) {
                const float gy = grad_out.plane(b, c, 0)[i];
                xhat[i] = static_cast<float>((x.plane(b, c, 0)[i] - stats.mean[g]) * stats.rstd[g]);
                ghat[i] = gy * gm;
                gx[i] = gy * xhat[i];
            }
            dgamma[c] += exact_sum(gx);
            dbeta[c] += exact_sum(std::span<const float>(grad_out.plane(b, c, 0), n));
            if (grads.input) {
                const double m1 = exact_sum(ghat) / static_cast<double>(n);
                const double m2 = exact_sum(gx) * gm / static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i)
                    grads.input->plane(b, c, 0)[i] =
                        static_cast<float>((ghat[i] - m1 - xhat[i] * m2) * stats.rstd[g]);
            }
        }
    if (grads.kernel) {
        *grads.kernel = VideoTensor(gamma.shape());
        for (int c = 0; c < s.channels; ++c)
            grads.kernel->raw()[c] = static_cast<float>(dgamma[c]);
    }
    if (grads.bias) {
        *grads.bias = VideoTensor(gamma.shape());
        for (int c = 0; c < s.channels; ++c)
            grads.bias->raw()[c] = static_cast<float>(dbeta[c]);
    }
}

VideoTensor silu_forward(const VideoTensor& x)
{
    VideoTensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const float v = x.raw()[i];
        out.raw()[i] = v / (1.0f + std::exp(-v));
    }
    return out;
}

VideoTensor silu_backward(const VideoTensor& x, const VideoTensor& grad_out)
{
    require_same_shape(grad_out.shape(), x.shape(), "silu backward");
    VideoTensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const float v = x.raw()[i];
        const float sg = 1.0f / (1.0f + std::exp(-v));
        out.raw()[i] = grad_out.raw()[i] * sg * (1.0f + v * (1.0f - sg));
    }
    return out;
}

} // namespace panolab::kernels::reference

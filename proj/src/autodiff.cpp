#include "panolab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>

#include "panolab/error.hpp"

namespace panolab {

const VideoTensor& Var::value() const
{
    return tape_->value(*this);
}

Var Tape::constant(VideoTensor value)
{
    return record(std::move(value), false, {});
}

Var Tape::input(VideoTensor value)
{
    Var v = record(std::move(value), true, [](const VideoTensor&) {});
    nodes_.back().leaf = true;
    return v;
}

Var Tape::param(Parameter& p, bool trainable)
{
    Parameter* target = &p;
    Var v = record(p.value, trainable, [target](const VideoTensor& g) {
        float* dst = target->grad.raw();
        const float* src = g.raw();
        for (std::size_t i = 0; i < g.numel(); ++i)
            dst[i] += src[i];
    });
    nodes_.back().leaf = true;
    return v;
}

Var Tape::record(VideoTensor value, bool requires_grad, Backward backward)
{
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && mode_ == GradMode::on;
    if (n.requires_grad)
        n.backward = std::move(backward);
    n.scalar = std::numeric_limits<double>::quiet_NaN();
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

VideoTensor Tape::grad(const Var& v) const
{
    const Node& n = nodes_[v.id_];
    return n.has_grad ? n.grad : VideoTensor(n.value.shape());
}

double Tape::scalar(const Var& v) const
{
    const Node& n = nodes_[v.id_];
    if (std::isnan(n.scalar) && n.value.numel() == 1)
        return n.value.raw()[0];
    return n.scalar;
}

void Tape::accumulate(const Var& v, const VideoTensor& g)
{
    if (!requires_grad(v))
        return;
    Node& n = nodes_[v.id_];
    require_same_shape(g.shape(), n.value.shape(), "gradient accumulation");
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
        return;
    }
    float* dst = n.grad.raw();
    const float* src = g.raw();
    for (std::size_t i = 0; i < g.numel(); ++i)
        dst[i] += src[i];
}

void Tape::backward(const Var& loss)
{
    if (value(loss).numel() != 1)
        throw ArgumentError("backward: loss must be a scalar, got shape " + value(loss).shape().str());
    if (!requires_grad(loss))
        return;
    accumulate(loss, VideoTensor(value(loss).shape(), 1.0f));
    for (int i = loss.id_; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.has_grad || !n.backward)
            continue;
        if (n.leaf) {
            n.backward(n.grad);
            continue;
        }
        // Interior gradients are released once propagated.
        const VideoTensor g = std::move(n.grad);
        n.grad = VideoTensor();
        n.has_grad = false;
        n.backward(g);
    }
}

VideoTensor pixel_unshuffle(const VideoTensor& x, int r)
{
    const Shape& s = x.shape();
    if (r < 1 || s.height % r || s.width % r)
        throw ShapeError("pixel_unshuffle: extents " + s.str() + " not divisible by factor " +
                         std::to_string(r));
    const int ho = s.height / r;
    const int wo = s.width / r;
    VideoTensor out(Shape{s.batch, s.channels * r * r, s.frames, ho, wo});
    for (int b = 0; b < s.batch; ++b)
        for (int c = 0; c < s.channels; ++c)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int oc = (c * r + dy) * r + dx;
                    for (int f = 0; f < s.frames; ++f)
                        for (int y = 0; y < ho; ++y)
                            for (int xo = 0; xo < wo; ++xo)
                                out.at(b, oc, f, y, xo) = x.at(b, c, f, y * r + dy, xo * r + dx);
                }
    return out;
}

VideoTensor pixel_shuffle(const VideoTensor& x, int r)
{
    const Shape& s = x.shape();
    if (r < 1 || s.channels % (r * r))
        throw ShapeError("pixel_shuffle: channels of " + s.str() + " not divisible by " +
                         std::to_string(r * r));
    const int co = s.channels / (r * r);
    VideoTensor out(Shape{s.batch, co, s.frames, s.height * r, s.width * r});
    for (int b = 0; b < s.batch; ++b)
        for (int c = 0; c < co; ++c)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int ic = (c * r + dy) * r + dx;
                    for (int f = 0; f < s.frames; ++f)
                        for (int y = 0; y < s.height; ++y)
                            for (int xo = 0; xo < s.width; ++xo)
                                out.at(b, c, f, y * r + dy, xo * r + dx) = x.at(b, ic, f, y, xo);
                }
    return out;
}

namespace ops {

namespace {

bool any_grad(std::initializer_list<const Var*> vars)
{
    for (const Var* v : vars)
        if (v->valid() && v->tape().requires_grad(*v))
            return true;
    return false;
}

Tape& tape_of(const Var& x, const char* op)
{
    if (!x.valid())
        throw ArgumentError(std::string(op) + ": input is not recorded on a tape");
    return x.tape();
}

// Elementwise binary op on equal shapes.
template <class F>
VideoTensor zip(const VideoTensor& a, const VideoTensor& b, F f)
{
    VideoTensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i)
        out.raw()[i] = f(a.raw()[i], b.raw()[i]);
    return out;
}

} // namespace

Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride, PadMode pad)
{
    Tape& t = tape_of(x, "conv2d");
    const VideoTensor* b = bias.valid() ? &bias.value() : nullptr;
    VideoTensor out = kernels::conv2d_forward(x.value(), kernel.value(), b, stride, pad);
    const bool need = any_grad({&x, &kernel, &bias});
    return t.record(std::move(out), need, [&t, x, kernel, bias, stride, pad](const VideoTensor& g) {
        VideoTensor gx, gk, gb;
        kernels::GradTargets targets;
        if (t.requires_grad(x))
            targets.input = &gx;
        if (t.requires_grad(kernel))
            targets.kernel = &gk;
        if (t.requires_grad(bias))
            targets.bias = &gb;
        kernels::conv2d_backward(x.value(), kernel.value(), stride, pad, g, targets);
        if (targets.input)
            t.accumulate(x, gx);
        if (targets.kernel)
            t.accumulate(kernel, gk);
        if (targets.bias)
            t.accumulate(bias, gb);
    });
}

Var temporal_conv(const Var& x, const Var& kernel, const Var& bias)
{
    Tape& t = tape_of(x, "temporal_conv");
    const VideoTensor* b = bias.valid() ? &bias.value() : nullptr;
    VideoTensor out = kernels::temporal_conv_forward(x.value(), kernel.value(), b);
    const bool need = any_grad({&x, &kernel, &bias});
    return t.record(std::move(out), need, [&t, x, kernel, bias](const VideoTensor& g) {
        VideoTensor gx, gk, gb;
        kernels::GradTargets targets;
        if (t.requires_grad(x))
            targets.input = &gx;
        if (t.requires_grad(kernel))
            targets.kernel = &gk;
        if (t.requires_grad(bias))
            targets.bias = &gb;
        kernels::temporal_conv_backward(x.value(), kernel.value(), g, targets);
        if (targets.input)
            t.accumulate(x, gx);
        if (targets.kernel)
            t.accumulate(kernel, gk);
        if (targets.bias)
            t.accumulate(bias, gb);
    });
}

Var pseudo3d_pair(const Var& x, const Var& spatial_kernel, const Var& spatial_bias,
                  const Var& temporal_kernel, const Var& temporal_bias, PadMode pad)
{
    const Shape& sk = spatial_kernel.shape();
    const Shape& tk = temporal_kernel.shape();
    const int c = x.shape().channels;
    if (sk.batch != c || sk.channels != c || tk.batch != c || tk.channels != c)
        throw ShapeError("pseudo3d_pair: input " + x.shape().str() + " needs (C,C,...) kernels, got " +
                         sk.str() + " and " + tk.str());
    if (sk.frames != 1 || tk.height != 1 || tk.width != 1)
        throw ShapeError("pseudo3d_pair: kernels " + sk.str() + " and " + tk.str() +
                         " are not spatial (C,C,1,k,k) / temporal (C,C,kt,1,1)");
    return temporal_conv(conv2d(x, spatial_kernel, spatial_bias, 1, pad), temporal_kernel, temporal_bias);
}

Var channel_norm(const Var& x, const Var& gamma, const Var& beta)
{
    Tape& t = tape_of(x, "channel_norm");
    constexpr float eps = 1e-5f;
    auto stats = std::make_shared<kernels::NormStats>();
    VideoTensor out = kernels::channel_norm_forward(x.value(), gamma.value(), beta.value(), eps, *stats);
    const bool need = any_grad({&x, &gamma, &beta});
    return t.record(std::move(out), need, [&t, x, gamma, beta, stats](const VideoTensor& g) {
        VideoTensor gx, gg, gb;
        kernels::GradTargets targets;
        if (t.requires_grad(x))
            targets.input = &gx;
        if (t.requires_grad(gamma))
            targets.kernel = &gg;
        if (t.requires_grad(beta))
            targets.bias = &gb;
        kernels::channel_norm_backward(x.value(), gamma.value(), *stats, g, targets);
        if (targets.input)
            t.accumulate(x, gx);
        if (targets.kernel)
            t.accumulate(gamma, gg);
        if (targets.bias)
            t.accumulate(beta, gb);
    });
}

Var silu(const Var& x)
{
    Tape& t = tape_of(x, "silu");
    return t.record(kernels::silu_forward(x.value()), any_grad({&x}), [&t, x](const VideoTensor& g) {
        t.accumulate(x, kernels::silu_backward(x.value(), g));
    });
}

Var add(const Var& a, const Var& b)
{
    Tape& t = tape_of(a, "add");
    require_same_shape(a.shape(), b.shape(), "add");
    VideoTensor out = zip(a.value(), b.value(), [](float u, float v) { return u + v; });
    return t.record(std::move(out), any_grad({&a, &b}), [&t, a, b](const VideoTensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var add_scaled(const Var& a, const Var& b, float w)
{
    Tape& t = tape_of(a, "add_scaled");
    require_same_shape(a.shape(), b.shape(), "add_scaled");
    VideoTensor out = zip(a.value(), b.value(), [w](float u, float v) { return u + w * v; });
    return t.record(std::move(out), any_grad({&a, &b}), [&t, a, b, w](const VideoTensor& g) {
        t.accumulate(a, g);
        if (t.requires_grad(b)) {
            VideoTensor gb(g.shape());
            for (std::size_t i = 0; i < g.numel(); ++i)
                gb.raw()[i] = w * g.raw()[i];
            t.accumulate(b, gb);
        }
    });
}

Var scale(const Var& x, float s)
{
    Tape& t = tape_of(x, "scale");
    VideoTensor out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.raw()[i] = s * x.value().raw()[i];
    return t.record(std::move(out), any_grad({&x}), [&t, x, s](const VideoTensor& g) {
        VideoTensor gx(g.shape());
        for (std::size_t i = 0; i < g.numel(); ++i)
            gx.raw()[i] = s * g.raw()[i];
        t.accumulate(x, gx);
    });
}

Var add_channel_bias(const Var& x, const Var& e)
{
    Tape& t = tape_of(x, "add_channel_bias");
    const Shape& s = x.shape();
    const Shape& es = e.shape();
    if (es.batch != s.batch || es.channels != s.channels || es.frames != 1 || es.height != 1 ||
        es.width != 1)
        throw ShapeError("add_channel_bias: input " + s.str() + " does not match bias " + es.str());
    const std::size_t block = static_cast<std::size_t>(s.frames) * s.plane();
    VideoTensor out(s);
    for (int g = 0; g < s.batch * s.channels; ++g) {
        const float v = e.value().raw()[g];
        const float* in = x.value().raw() + g * block;
        float* o = out.raw() + g * block;
        for (std::size_t i = 0; i < block; ++i)
            o[i] = in[i] + v;
    }
    return t.record(std::move(out), any_grad({&x, &e}), [&t, x, e, block](const VideoTensor& g) {
        t.accumulate(x, g);
        if (t.requires_grad(e)) {
            VideoTensor ge(e.shape());
            for (std::size_t k = 0; k < ge.numel(); ++k) {
                double acc = 0.0;
                const float* src = g.raw() + k * block;
                for (std::size_t i = 0; i < block; ++i)
                    acc += src[i];
                ge.raw()[k] = static_cast<float>(acc);
            }
            t.accumulate(e, ge);
        }
    });
}

Var upsample2(const Var& x)
{
    Tape& t = tape_of(x, "upsample2");
    const Shape& s = x.shape();
    VideoTensor out(Shape{s.batch, s.channels, s.frames, s.height * 2, s.width * 2});
    const std::size_t planes = static_cast<std::size_t>(s.batch) * s.channels * s.frames;
    const int wo = s.width * 2;
    for (std::size_t p = 0; p < planes; ++p) {
        const float* in = x.value().raw() + p * s.plane();
        float* o = out.raw() + p * 4 * s.plane();
        for (int y = 0; y < s.height * 2; ++y)
            for (int xo = 0; xo < wo; ++xo)
                o[y * wo + xo] = in[(y / 2) * s.width + xo / 2];
    }
    return t.record(std::move(out), any_grad({&x}), [&t, x, planes, wo](const VideoTensor& g) {
        const Shape& s = x.shape();
        VideoTensor gx(s);
        for (std::size_t p = 0; p < planes; ++p) {
            const float* gi = g.raw() + p * 4 * s.plane();
            float* o = gx.raw() + p * s.plane();
            for (int y = 0; y < s.height; ++y)
                for (int xo = 0; xo < s.width; ++xo) {
                    const float* r0 = gi + (2 * y) * wo + 2 * xo;
                    const float* r1 = r0 + wo;
                    o[y * s.width + xo] = (r0[0] + r0[1]) + (r1[0] + r1[1]);
                }
        }
        t.accumulate(x, gx);
    });
}

Var pixel_unshuffle(const Var& x, int r)
{
    Tape& t = tape_of(x, "pixel_unshuffle");
    return t.record(panolab::pixel_unshuffle(x.value(), r), any_grad({&x}), [&t, x, r](const VideoTensor& g) {
        t.accumulate(x, panolab::pixel_shuffle(g, r));
    });
}

Var pixel_shuffle(const Var& x, int r)
{
    Tape& t = tape_of(x, "pixel_shuffle");
    return t.record(panolab::pixel_shuffle(x.value(), r), any_grad({&x}), [&t, x, r](const VideoTensor& g) {
        t.accumulate(x, panolab::pixel_unshuffle(g, r));
    });
}

Var sum(const Var& x)
{
    Tape& t = tape_of(x, "sum");
    double acc = 0.0;
    for (float v : x.value().data())
        acc += v;
    Var out = t.record(VideoTensor(Shape{}, static_cast<float>(acc)), any_grad({&x}),
                       [&t, x](const VideoTensor& g) {
                           t.accumulate(x, VideoTensor(x.shape(), g.raw()[0]));
                       });
    t.set_scalar(out, acc);
    return out;
}

Var weighted_sum(const Var& x, const VideoTensor& w)
{
    Tape& t = tape_of(x, "weighted_sum");
    require_same_shape(x.shape(), w.shape(), "weighted_sum");
    double acc = 0.0;
    for (std::size_t i = 0; i < w.numel(); ++i)
        acc += static_cast<double>(w.raw()[i]) * x.value().raw()[i];
    Var out = t.record(VideoTensor(Shape{}, static_cast<float>(acc)), any_grad({&x}),
                       [&t, x, w](const VideoTensor& g) {
                           VideoTensor gx(w.shape());
                           for (std::size_t i = 0; i < w.numel(); ++i)
                               gx.raw()[i] = g.raw()[0] * w.raw()[i];
                           t.accumulate(x, gx);
                       });
    t.set_scalar(out, acc);
    return out;
}

Var square_norm(const Var& x)
{
    Tape& t = tape_of(x, "square_norm");
    double acc = 0.0;
    for (float v : x.value().data())
        acc += static_cast<double>(v) * v;
    Var out = t.record(VideoTensor(Shape{}, static_cast<float>(acc)), any_grad({&x}),
                       [&t, x](const VideoTensor& g) {
                           VideoTensor gx(x.shape());
                           for (std::size_t i = 0; i < gx.numel(); ++i)
                               gx.raw()[i] = 2.0f * g.raw()[0] * x.value().raw()[i];
                           t.accumulate(x, gx);
                       });
    t.set_scalar(out, acc);
    return out;
}

} // namespace ops

double backward_and_check(const std::function<Var(Tape&)>& loss_fn,
                          std::span<Parameter* const> params, const GradCheckOptions& opts)
{
    if (!(opts.step > 0.0f))
        throw ArgumentError("backward_and_check: finite-difference step must be positive");
    for (Parameter* p : params)
        p->zero_grad();
    {
        Tape tape;
        const Var loss = loss_fn(tape);
        if (loss.value().numel() != 1)
            throw ArgumentError("backward_and_check: loss must be a scalar, got shape " +
                                loss.shape().str());
        tape.backward(loss);
    }

    auto evaluate = [&]() {
        Tape tape(GradMode::off);
        const Var loss = loss_fn(tape);
        return tape.scalar(loss);
    };

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    std::size_t total = 0;
    for (Parameter* p : params)
        total += p->value.numel();
    if (opts.coordinates <= 0) {
        for (std::size_t pi = 0; pi < params.size(); ++pi)
            for (std::size_t i = 0; i < params[pi]->value.numel(); ++i)
                coords.emplace_back(pi, i);
    } else {
        std::mt19937_64 rng(opts.seed);
        std::uniform_int_distribution<std::size_t> pick(0, total - 1);
        for (int k = 0; k < opts.coordinates; ++k) {
            std::size_t flat = pick(rng);
            std::size_t pi = 0;
            while (flat >= params[pi]->value.numel()) {
                flat -= params[pi]->value.numel();
                ++pi;
            }
            coords.emplace_back(pi, flat);
        }
    }

    double worst = 0.0;
    for (const auto& [pi, i] : coords) {
        float& v = params[pi]->value.raw()[i];
        const float original = v;
        auto loss_at = [&](float offset) {
            v = original + offset;
            const double actual = static_cast<double>(v) - original;
            const double l = evaluate();
            v = original;
            return std::pair{l, actual};
        };
        auto estimate = [&](float h) {
            const auto [up, du] = loss_at(h);
            const auto [down, dd] = loss_at(-h);
            const double d1 = (up - down) / (du - dd);
            if (opts.stencil != 4)
                return d1;
            const auto [up2, du2] = loss_at(2.0f * h);
            const auto [down2, dd2] = loss_at(-2.0f * h);
            const double d2 = (up2 - down2) / (du2 - dd2);
            return (4.0 * d1 - d2) / 3.0;
        };
        // Plateau rule: among steps h * 2^k, keep the estimate that agrees
        // best with its neighbour one rung up.
        std::vector<double> ladder;
        for (int k = 0; k < std::max(1, opts.rungs); ++k)
            ladder.push_back(estimate(std::ldexp(opts.step, k)));
        double fd = ladder[0];
        double spread = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k + 1 < ladder.size(); ++k)
            if (std::fabs(ladder[k] - ladder[k + 1]) < spread) {
                spread = std::fabs(ladder[k] - ladder[k + 1]);
                fd = ladder[k];
            }
        const double g = params[pi]->grad.raw()[i];
        const double err = std::fabs(g - fd) / std::max({std::fabs(g), std::fabs(fd), opts.floor});
        worst = std::max(worst, err);
        if (opts.report)
            opts.report->push_back({params[pi]->name, i, g, fd, err});
    }
    return worst;
}

} // namespace panolab

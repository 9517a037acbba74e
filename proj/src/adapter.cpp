#include "panolab/adapter.hpp"

#include <string>

#include "panolab/error.hpp"

namespace panolab {

namespace {

std::string block(int k) { return "adapter.block" + std::to_string(k + 1) + "."; }

void add_conv(ParamSet& ps, const std::string& name, int co, int ci, int kt, int k, std::uint64_t seed, bool zero)
{
    const Shape ks{co, ci, kt, k, k};
    ps.add(name + ".weight", zero ? VideoTensor(ks) : fan_in_uniform(ks, ci * kt * k * k, seed, name));
    ps.add(name + ".bias", VideoTensor(Shape{co, 1, 1, 1, 1}));
}

Var conv(ParamBinder& bind, const Var& x, const std::string& name, int stride, PadMode pad)
{
    return ops::conv2d(x, bind(name + ".weight"), bind(name + ".bias"), stride, pad);
}

} // namespace

void validate_config(const AdapterConfig& cfg)
{
    if (cfg.in_channels < 1 || cfg.unshuffle_factor < 1)
        throw ArgumentError("adapter needs in_channels >= 1 and unshuffle_factor >= 1");
    for (int c : cfg.channels)
        if (c < 1)
            throw ArgumentError("adapter channel widths must be >= 1");
}

int adapter_divisor(const AdapterConfig& cfg) noexcept { return cfg.unshuffle_factor * 8; }

void init_adapter(ParamSet& ps, const AdapterConfig& cfg, std::uint64_t seed)
{
    validate_config(cfg);
    int in = cfg.in_channels * cfg.unshuffle_factor * cfg.unshuffle_factor;
    for (int k = 0; k < 4; ++k) {
        const int ch = cfg.channels[k];
        if (k > 0)
            add_conv(ps, block(k) + "down", in, in, 1, 3, seed, false);
        add_conv(ps, block(k) + "conv", ch, in, 1, 3, seed, false);
        add_conv(ps, block(k) + "rb.spatial", ch, ch, 1, 3, seed, false);
        add_conv(ps, block(k) + "rb.temporal", ch, ch, 3, 1, seed, false);
        add_conv(ps, block(k) + "out", ch, ch, 1, 1, seed, cfg.zero_init_output);
        in = ch;
    }
}

FeatureVars adapter_forward(ParamBinder& bind, const Var& condition, const AdapterConfig& cfg, PadMode pad)
{
    validate_config(cfg);
    const Shape& s = condition.shape();
    const int div = adapter_divisor(cfg);
    if (s.channels != cfg.in_channels)
        throw ShapeError("adapter expects " + std::to_string(cfg.in_channels) + " condition channels, got " + s.str());
    if (s.height % div != 0 || s.width % div != 0)
        throw ShapeError("adapter condition height and width must be divisible by " + std::to_string(div) +
                         " (unshuffle factor x 8), got " + s.str());

    FeatureVars feats;
    Var h = cfg.unshuffle_factor > 1 ? ops::pixel_unshuffle(condition, cfg.unshuffle_factor) : condition;
    for (int k = 0; k < 4; ++k) {
        const std::string b = block(k);
        if (k > 0)
            h = conv(bind, h, b + "down", 2, pad);
        h = conv(bind, h, b + "conv", 1, pad);
        const Var r = ops::pseudo3d_pair(ops::silu(h), bind(b + "rb.spatial.weight"), bind(b + "rb.spatial.bias"),
                                         bind(b + "rb.temporal.weight"), bind(b + "rb.temporal.bias"), pad);
        h = ops::add(h, r);
        feats[k] = conv(bind, h, b + "out", 1, pad);
    }
    return feats;
}

AdapterFeatures adapter_forward(ParamSet& params, const std::optional<VideoTensor>& condition, const Shape& zero_shape,
                                const AdapterConfig& cfg, PadMode pad)
{
    Tape tape(GradMode::off);
    ParamBinder bind(tape, params, [](const Parameter&) { return false; });
    const Var c = tape.constant(condition ? *condition : VideoTensor(zero_shape));
    const FeatureVars v = adapter_forward(bind, c, cfg, pad);
    return {v[0].value(), v[1].value(), v[2].value(), v[3].value()};
}

std::array<VideoTensor, 4> inject_features(const std::array<VideoTensor, 4>& enc, const AdapterFeatures& feats, float w)
{
    std::array<VideoTensor, 4> out;
    for (int k = 0; k < 4; ++k) {
        if (!(enc[k].shape() == feats[k].shape()))
            throw ShapeError("feature scale " + std::to_string(k + 1) + ": encoder " + enc[k].shape().str() +
                             " vs adapter " + feats[k].shape().str());
        out[k] = enc[k];
        if (w == 0.0f)
            continue;
        for (std::size_t i = 0; i < out[k].numel(); ++i)
            out[k].raw()[i] += w * feats[k].raw()[i];
    }
    return out;
}

Var inject_feature(const Var& enc, const Var& feat, float w, int scale)
{
    if (!(enc.shape() == feat.shape()))
        throw ShapeError("feature scale " + std::to_string(scale + 1) + ": encoder " + enc.shape().str() +
                         " vs adapter " + feat.shape().str());
    return w == 0.0f ? enc : ops::add_scaled(enc, feat, w);
}

} // namespace panolab

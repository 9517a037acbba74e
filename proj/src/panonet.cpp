#include "panolab/panonet.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "panolab/error.hpp"

namespace panolab {

namespace {

void add_conv(ParamSet& ps, const std::string& name, int co, int ci, int kt, int k, std::uint64_t seed,
              bool zero = false)
{
    const Shape ks{co, ci, kt, k, k};
    ps.add(name + ".weight", zero ? VideoTensor(ks) : fan_in_uniform(ks, ci * kt * k * k, seed, name));
    ps.add(name + ".bias", VideoTensor(Shape{co, 1, 1, 1, 1}));
}

void add_norm(ParamSet& ps, const std::string& name, int c)
{
    ps.add(name + ".gamma", VideoTensor(Shape{c, 1, 1, 1, 1}, 1.0f));
    ps.add(name + ".beta", VideoTensor(Shape{c, 1, 1, 1, 1}));
}

void add_resblock(ParamSet& ps, const std::string& p, int cin, int cout, int time_dim, std::uint64_t seed)
{
    add_norm(ps, p + ".norm1", cin);
    add_conv(ps, p + ".spatial", cout, cin, 1, 3, seed);
    add_conv(ps, p + ".temb", cout, time_dim, 1, 1, seed);
    add_norm(ps, p + ".norm2", cout);
    add_conv(ps, p + ".temporal", cout, cout, 3, 1, seed);
    if (cin != cout)
        add_conv(ps, p + ".skip", cout, cin, 1, 1, seed);
}

Var conv(ParamBinder& bind, const Var& x, const std::string& name, int stride, PadMode pad)
{
    return ops::conv2d(x, bind(name + ".weight"), bind(name + ".bias"), stride, pad);
}

Var norm(ParamBinder& bind, const Var& x, const std::string& name)
{
    return ops::channel_norm(x, bind(name + ".gamma"), bind(name + ".beta"));
}

Var resblock(ParamBinder& bind, const Var& x, const Var& temb, const std::string& p, PadMode pad)
{
    Var h = conv(bind, ops::silu(norm(bind, x, p + ".norm1")), p + ".spatial", 1, pad);
    // After norm2: a per-channel shift in front of it would be normalized away.
    h = ops::add_channel_bias(norm(bind, h, p + ".norm2"), conv(bind, temb, p + ".temb", 1, PadMode::zeros));
    h = ops::temporal_conv(ops::silu(h), bind(p + ".temporal.weight"), bind(p + ".temporal.bias"));
    const Var skip = x.shape().channels == h.shape().channels ? x : conv(bind, x, p + ".skip", 1, pad);
    return ops::add(skip, h);
}

std::string enc(int k) { return "unet.enc" + std::to_string(k + 1); }
std::string dec(int k) { return "unet.dec" + std::to_string(k + 1); }

// Copies of one batch entry in and out of a batched tensor.
std::size_t sample_size(const Shape& s) { return s.numel() / s.batch; }

} // namespace

void validate_config(const DenoiserConfig& cfg)
{
    if (cfg.in_channels < 1 || cfg.frames < 1)
        throw ArgumentError("denoiser needs in_channels >= 1 and frames >= 1");
    if (cfg.time_dim < 2 || cfg.time_dim % 2 != 0)
        throw ArgumentError("timestep embedding dimension must be even and >= 2");
    for (int c : cfg.channels)
        if (c < 1)
            throw ArgumentError("denoiser channel widths must be >= 1");
}

void init_denoiser(ParamSet& ps, const DenoiserConfig& cfg, std::uint64_t seed)
{
    validate_config(cfg);
    const auto& ch = cfg.channels;
    add_conv(ps, "unet.time.fc", cfg.time_dim, cfg.time_dim, 1, 1, seed);
    add_conv(ps, "unet.conv_in", ch[0], cfg.in_channels, 1, 3, seed);
    for (int k = 0; k < 4; ++k) {
        const int cin = k == 0 ? ch[0] : ch[k - 1];
        if (k > 0)
            add_conv(ps, enc(k) + ".down", cin, cin, 1, 3, seed);
        add_resblock(ps, enc(k) + ".res", cin, ch[k], cfg.time_dim, seed);
    }
    add_resblock(ps, "unet.mid", ch[3], ch[3], cfg.time_dim, seed);
    for (int k = 3; k >= 0; --k) {
        const int cout = k == 0 ? ch[0] : ch[k - 1];
        add_resblock(ps, dec(k) + ".res", ch[k], cout, cfg.time_dim, seed);
    }
    add_norm(ps, "unet.norm_out", ch[0]);
    add_conv(ps, "unet.conv_out", cfg.in_channels, ch[0], 1, 3, seed, true);
}

VideoTensor timestep_embedding(std::span<const int> t, int dim)
{
    const int half = dim / 2;
    VideoTensor e(Shape{static_cast<int>(t.size()), dim, 1, 1, 1});
    for (std::size_t b = 0; b < t.size(); ++b)
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / half);
            e.at(static_cast<int>(b), i, 0, 0, 0) = static_cast<float>(std::sin(t[b] * freq));
            e.at(static_cast<int>(b), half + i, 0, 0, 0) = static_cast<float>(std::cos(t[b] * freq));
        }
    return e;
}

std::array<Shape, 4> encoder_shapes(const Shape& s, const DenoiserConfig& cfg)
{
    std::array<Shape, 4> out;
    for (int k = 0; k < 4; ++k)
        out[k] = Shape{s.batch, cfg.channels[k], s.frames, s.height >> k, s.width >> k};
    return out;
}

Var unet_forward(ParamBinder& bind, const Var& z_t, std::span<const int> t, const FeatureVars* feats, float w,
                 const DenoiserConfig& cfg, PadMode pad)
{
    validate_config(cfg);
    const Shape& s = z_t.shape();
    if (s.channels != cfg.in_channels)
        throw ShapeError("denoiser expects " + std::to_string(cfg.in_channels) + " channels, got " + s.str());
    if (s.height % 8 != 0 || s.width % 8 != 0)
        throw ShapeError("denoiser input height and width must be divisible by 8, got " + s.str());
    if (static_cast<int>(t.size()) != s.batch)
        throw ArgumentError("need one timestep per batch entry");

    Tape& tape = bind.tape();
    Var temb = tape.constant(timestep_embedding(t, cfg.time_dim));
    temb = ops::silu(conv(bind, temb, "unet.time.fc", 1, PadMode::zeros));

    Var h = conv(bind, z_t, "unet.conv_in", 1, pad);
    std::array<Var, 4> skips;
    for (int k = 0; k < 4; ++k) {
        if (k > 0)
            h = conv(bind, h, enc(k) + ".down", 2, pad);
        h = resblock(bind, h, temb, enc(k) + ".res", pad);
        if (feats)
            h = inject_feature(h, (*feats)[k], w, k);
        skips[k] = h;
    }
    h = resblock(bind, h, temb, "unet.mid", pad);
    for (int k = 3; k >= 0; --k) {
        h = resblock(bind, ops::add(h, skips[k]), temb, dec(k) + ".res", pad);
        if (k > 0)
            h = ops::upsample2(h);
    }
    h = ops::silu(norm(bind, h, "unet.norm_out"));
    return conv(bind, h, "unet.conv_out", 1, pad);
}

VideoTensor unet_forward(ParamSet& params, const VideoTensor& z_t, int t, const AdapterFeatures* feats, float w,
                         const DenoiserConfig& cfg, PadMode pad)
{
    Tape tape(GradMode::off);
    ParamBinder bind(tape, params, [](const Parameter&) { return false; });
    const std::vector<int> ts(static_cast<std::size_t>(z_t.shape().batch), t);
    FeatureVars fv;
    if (feats)
        for (int k = 0; k < 4; ++k)
            fv[k] = tape.constant((*feats)[k]);
    return unet_forward(bind, tape.constant(z_t), ts, feats ? &fv : nullptr, w, cfg, pad).value();
}

std::pair<std::vector<Parameter*>, std::vector<Parameter*>> freeze_partition(const ParamSet& params, Phase phase)
{
    const std::string_view train = phase == Phase::backbone ? "unet." : "adapter.";
    std::vector<Parameter*> frozen, trainable;
    for (Parameter* p : params.all())
        (std::string_view(p->name).starts_with(train) ? trainable : frozen).push_back(p);
    if (trainable.empty())
        throw ArgumentError(std::string("no trainable parameters for phase ") +
                            (phase == Phase::backbone ? "backbone" : "adapter"));
    return {std::move(frozen), std::move(trainable)};
}

void validate_config(const TrainConfig& cfg)
{
    if (cfg.steps < 0 || cfg.batch < 1)
        throw ArgumentError("training needs steps >= 0 and batch >= 1");
    if (!(cfg.p_zero >= 0.0 && cfg.p_zero <= 1.0))
        throw ArgumentError("p_zero must lie in [0, 1]");
    if (!(cfg.lr > 0.0))
        throw ArgumentError("learning rate must be positive");
}

VideoTensor flow_to_condition(const VideoTensor& flow)
{
    if (flow.shape().channels != 2)
        throw ShapeError("flow must have 2 channels, got " + flow.shape().str());
    VideoTensor c = flow;
    const float inv = 1.0f / static_cast<float>(flow.shape().width);
    for (float& v : c.data())
        v *= inv;
    return c;
}

VideoTensor q_sample_batch(const VideoTensor& x0, std::span<const int> t, const VideoTensor& eps,
                           const NoiseSchedule& sched)
{
    require_same_shape(x0.shape(), eps.shape(), "q_sample_batch");
    const Shape& s = x0.shape();
    if (static_cast<int>(t.size()) != s.batch)
        throw ArgumentError("need one timestep per batch entry");
    const std::size_t n = sample_size(s);
    const Shape one{1, s.channels, s.frames, s.height, s.width};
    VideoTensor out(s);
    for (int b = 0; b < s.batch; ++b) {
        const auto first = static_cast<std::ptrdiff_t>(b * n);
        const VideoTensor xb(one, std::vector<float>(x0.data().begin() + first, x0.data().begin() + first + n));
        const VideoTensor eb(one, std::vector<float>(eps.data().begin() + first, eps.data().begin() + first + n));
        const VideoTensor q = q_sample(xb, t[b], eb, sched);
        std::copy(q.data().begin(), q.data().end(), out.data().begin() + first);
    }
    return out;
}

VideoTensor roll_columns_batch(const VideoTensor& x, std::span<const int> shift)
{
    const Shape& s = x.shape();
    if (static_cast<int>(shift.size()) != s.batch)
        throw ArgumentError("need one shift per batch entry");
    const std::size_t n = sample_size(s);
    const Shape one{1, s.channels, s.frames, s.height, s.width};
    VideoTensor out(s);
    for (int b = 0; b < s.batch; ++b) {
        const auto first = static_cast<std::ptrdiff_t>(b * n);
        const VideoTensor xb(one, std::vector<float>(x.data().begin() + first, x.data().begin() + first + n));
        const VideoTensor r = roll_columns(xb, shift[b]);
        std::copy(r.data().begin(), r.data().end(), out.data().begin() + first);
    }
    return out;
}

double train_step(Model& model, const VideoTensor& video, const VideoTensor& flow, const NoiseSchedule& sched,
                  const TrainConfig& cfg, Phase phase, Adam& opt, std::mt19937_64& rng, StepDraws* draws)
{
    validate_config(cfg);
    const Shape& vs = video.shape();
    const Shape& fs = flow.shape();
    if (fs.channels != 2 || vs.batch != fs.batch || vs.frames != fs.frames || vs.height != fs.height ||
        vs.width != fs.width)
        throw ShapeError("video " + vs.str() + " and flow " + fs.str() + " are not aligned");

    const auto [frozen, trainable] = freeze_partition(model.params, phase);
    (void)frozen;
    const int B = vs.batch;

    StepDraws d;
    std::uniform_int_distribution<int> pick_t(0, sched.steps() - 1);
    std::uniform_int_distribution<int> pick_shift(0, vs.width - 1);
    std::bernoulli_distribution drop(cfg.p_zero);
    for (int b = 0; b < B; ++b) {
        d.t.push_back(pick_t(rng));
        d.dropped.push_back(drop(rng));
        d.shift.push_back(cfg.rotation_augment ? pick_shift(rng) : 0);
    }
    VideoTensor eps(vs);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (float& v : eps.data())
        v = normal(rng);

    VideoTensor x0 = video;
    for (float& v : x0.data())
        v = 2.0f * v - 1.0f;
    VideoTensor cond = flow_to_condition(flow);
    if (cfg.rotation_augment) {
        x0 = roll_columns_batch(x0, d.shift);
        cond = roll_columns_batch(cond, d.shift);
    }
    const std::size_t n = sample_size(fs);
    for (int b = 0; b < B; ++b)
        if (d.dropped[b])
            std::fill_n(cond.data().begin() + static_cast<std::ptrdiff_t>(b * n), n, 0.0f);
    const VideoTensor z_t = q_sample_batch(x0, d.t, eps, sched);

    model.params.zero_grad();
    Tape tape;
    const std::string_view train_prefix = phase == Phase::backbone ? "unet." : "adapter.";
    ParamBinder bind(tape, model.params,
                     [train_prefix](const Parameter& p) { return std::string_view(p.name).starts_with(train_prefix); });
    FeatureVars feats;
    const bool conditioned = phase == Phase::adapter;
    if (conditioned)
        feats = adapter_forward(bind, tape.constant(cond), model.adapter, PadMode::zeros);
    const Var eps_hat = unet_forward(bind, tape.constant(z_t), d.t, conditioned ? &feats : nullptr,
                                     cfg.adapter_weight, model.unet, PadMode::zeros);
    const LatitudeWeights w = cfg.latitude_loss ? latitude_weight_matrix(vs.height, vs.width)
                                                : uniform_weights(vs.height, vs.width);
    const Var loss = ops::latitude_loss(eps_hat, eps, w);
    const double value = tape.scalar(loss);
    tape.backward(loss);
    opt.step(trainable);
    if (draws)
        *draws = std::move(d);
    return value;
}

} // namespace panolab

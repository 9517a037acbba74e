#include "panolab/trainer.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "panolab/error.hpp"
#include "panolab/io.hpp"
#include "panolab/synth.hpp"

namespace panolab {

std::vector<std::uint64_t> scene_seeds(std::uint64_t seed, int scenes)
{
    std::mt19937_64 rng(seed);
    std::vector<std::uint64_t> out(static_cast<std::size_t>(std::max(scenes, 0)));
    for (auto& s : out)
        s = rng();
    return out;
}

Dataset make_dataset(std::uint64_t seed, int scenes, int frames, int height)
{
    Dataset d;
    for (std::uint64_t s : scene_seeds(seed, scenes)) {
        RenderedScene r = render_sequence(random_scene(s, frames, height));
        d.videos.push_back(std::move(r.video));
        d.flows.push_back(std::move(r.flow));
    }
    return d;
}

VideoTensor stack_batch(const std::vector<VideoTensor>& items, std::span<const int> indices)
{
    if (indices.empty())
        throw ArgumentError("stack_batch needs at least one index");
    Shape s = items.at(static_cast<std::size_t>(indices[0])).shape();
    const std::size_t n = s.numel();
    s.batch = static_cast<int>(indices.size());
    VideoTensor out(s);
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const VideoTensor& x = items.at(static_cast<std::size_t>(indices[b]));
        if (x.numel() != n || x.shape().batch != 1)
            throw ShapeError("stack_batch: entry " + std::to_string(indices[b]) + " has shape " + x.shape().str());
        std::copy(x.data().begin(), x.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * n));
    }
    return out;
}

Model make_model(const DenoiserConfig& unet, const AdapterConfig& adapter, std::uint64_t seed)
{
    Model m;
    m.unet = unet;
    m.adapter = adapter;
    init_denoiser(m.params, m.unet, seed);
    init_adapter(m.params, m.adapter, seed);
    return m;
}

Model lab_model(std::uint64_t seed, int frames)
{
    DenoiserConfig u;
    u.channels = {8, 16, 32, 32};
    u.frames = frames;
    AdapterConfig a;
    a.channels = u.channels;
    a.unshuffle_factor = 1;
    return make_model(u, a, seed);
}

std::vector<double> train_phase(Model& model, const Dataset& data, const NoiseSchedule& sched,
                                const TrainConfig& cfg, Phase phase, const StepCallback& on_step)
{
    validate_config(cfg);
    if (data.size() == 0)
        throw ArgumentError("training needs a non-empty dataset");
    Adam opt(AdamConfig{static_cast<float>(cfg.lr)});
    std::mt19937_64 rng(cfg.seed);
    std::mt19937_64 pick_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(data.size()) - 1);
    std::vector<double> losses;
    std::vector<int> idx(static_cast<std::size_t>(cfg.batch));
    for (int step = 0; step < cfg.steps; ++step) {
        for (int& i : idx)
            i = pick(pick_rng);
        const double loss = train_step(model, stack_batch(data.videos, idx), stack_batch(data.flows, idx), sched,
                                       cfg, phase, opt, rng);
        losses.push_back(loss);
        if (on_step)
            on_step(step, loss);
    }
    return losses;
}

namespace {

VideoTensor int_entry(std::initializer_list<int> v)
{
    std::vector<float> data;
    for (int x : v)
        data.push_back(static_cast<float>(x));
    const int n = static_cast<int>(data.size());
    return VideoTensor(Shape{1, 1, 1, 1, n}, std::move(data));
}

std::vector<int> read_ints(const std::vector<NamedTensor>& e, const std::string& name, std::size_t count)
{
    const VideoTensor& t = find_tensor(e, name);
    if (t.numel() != count)
        throw IoError(IoError::Kind::parse, "checkpoint entry " + name + " has " + std::to_string(t.numel()) +
                                                " values, expected " + std::to_string(count));
    std::vector<int> out;
    for (float v : t.data()) {
        if (v != static_cast<float>(static_cast<int>(v)))
            throw IoError(IoError::Kind::parse, "checkpoint entry " + name + " is not integral");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& m)
{
    std::vector<NamedTensor> e;
    const auto& uc = m.unet.channels;
    const auto& ac = m.adapter.channels;
    e.push_back({"config.unet", int_entry({m.unet.in_channels, m.unet.frames, m.unet.time_dim})});
    e.push_back({"config.unet.channels", int_entry({uc[0], uc[1], uc[2], uc[3]})});
    e.push_back({"config.adapter", int_entry({m.adapter.in_channels, m.adapter.unshuffle_factor,
                                              m.adapter.zero_init_output ? 1 : 0})});
    e.push_back({"config.adapter.channels", int_entry({ac[0], ac[1], ac[2], ac[3]})});
    for (NamedTensor& p : param_entries(m.params))
        e.push_back(std::move(p));
    save_tensors(path, e);
}

Model load_checkpoint(const std::filesystem::path& path, std::uint64_t adapter_seed, bool* adapter_created)
{
    const std::vector<NamedTensor> e = load_tensors(path);
    Model m;
    const auto u = read_ints(e, "config.unet", 3);
    const auto uc = read_ints(e, "config.unet.channels", 4);
    const auto a = read_ints(e, "config.adapter", 3);
    const auto ac = read_ints(e, "config.adapter.channels", 4);
    m.unet.in_channels = u[0];
    m.unet.frames = u[1];
    m.unet.time_dim = u[2];
    std::copy(uc.begin(), uc.end(), m.unet.channels.begin());
    m.adapter.in_channels = a[0];
    m.adapter.unshuffle_factor = a[1];
    m.adapter.zero_init_output = a[2] != 0;
    std::copy(ac.begin(), ac.end(), m.adapter.channels.begin());

    init_denoiser(m.params, m.unet, 0);
    const std::size_t unet_count = m.params.size();
    init_adapter(m.params, m.adapter, adapter_seed);
    const std::size_t adapter_count = m.params.size() - unet_count;

    std::size_t unet_set = 0, adapter_set = 0;
    for (const NamedTensor& t : e) {
        if (t.name.starts_with("config."))
            continue;
        Parameter* p = m.params.find(t.name);
        if (!p)
            throw IoError(IoError::Kind::parse, "checkpoint parameter " + t.name + " does not fit the model");
        require_same_shape(p->value.shape(), t.value.shape(), t.name.c_str());
        p->value = t.value;
        ++(t.name.starts_with("unet.") ? unet_set : adapter_set);
    }
    if (unet_set != unet_count)
        throw IoError(IoError::Kind::parse, "checkpoint " + path.string() + " lacks denoiser parameters");
    if (adapter_set != 0 && adapter_set != adapter_count)
        throw IoError(IoError::Kind::parse, "checkpoint " + path.string() + " has a partial adapter");
    if (adapter_created)
        *adapter_created = adapter_set == 0;
    return m;
}

} // namespace panolab

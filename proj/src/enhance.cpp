#include "panolab/enhance.hpp"

#include <cmath>
#include <numbers>

#include "panolab/error.hpp"
#include "panolab/sphere.hpp"

namespace panolab {

double canonical_theta(double theta) noexcept
{
    constexpr double turn = 2.0 * std::numbers::pi;
    double t = std::fmod(theta, turn);
    if (t < 0.0)
        t += turn;
    return t >= turn ? 0.0 : t;
}

int circular_from_step(int n_steps) noexcept { return (n_steps + 1) / 2; }

Denoiser model_denoiser(Model& model, float adapter_weight)
{
    return [&model, adapter_weight](const VideoTensor& latent, int t, const std::optional<VideoTensor>& condition,
                                    PadMode pad) {
        if (!condition)
            return unet_forward(model.params, latent, t, nullptr, adapter_weight, model.unet, pad);
        const AdapterFeatures f = adapter_forward(model.params, condition, condition->shape(), model.adapter, pad);
        return unet_forward(model.params, latent, t, &f, adapter_weight, model.unet, pad);
    };
}

VideoTensor sample_with_enhancements(const Denoiser& denoiser, const std::optional<VideoTensor>& condition,
                                     VideoTensor z_T, const NoiseSchedule& sched, int n_steps,
                                     const EnhancementConfig& cfg)
{
    const Shape& zs = z_T.shape();
    if (condition) {
        const Shape& cs = condition->shape();
        if (cs.batch != zs.batch || cs.frames != zs.frames || cs.height != zs.height || cs.width != zs.width)
            throw ShapeError("condition " + cs.str() + " does not match latent " + zs.str());
    }
    const int width = zs.width;
    const int shift = cfg.rotate_latents ? rotation_columns(width, canonical_theta(cfg.theta)) : 0;
    const int late = circular_from_step(n_steps);
    long long total = 0;

    const StepHook hook = [&](int step, SamplerState& s) {
        if (shift != 0) {
            s.latent = roll_columns(s.latent, shift);
            if (s.condition)
                s.condition = roll_columns(*s.condition, shift);
            total += shift;
        }
        s.pad = cfg.circular_late_half && step >= late ? PadMode::circular : PadMode::zeros;
    };
    VideoTensor out = ddim_sample(denoiser, std::move(z_T), sched, n_steps, hook, condition);
    const int undo = static_cast<int>((width - total % width) % width);
    return undo == 0 ? out : roll_columns(out, undo);
}

VideoTensor sample_with_enhancements(Model& model, const std::optional<VideoTensor>& condition, VideoTensor z_T,
                                     const NoiseSchedule& sched, int n_steps, const EnhancementConfig& cfg)
{
    return sample_with_enhancements(model_denoiser(model, cfg.adapter_weight), condition, std::move(z_T), sched,
                                    n_steps, cfg);
}

SeamReport seam_metric(const VideoTensor& video)
{
    const Shape& s = video.shape();
    if (s.width < 2)
        throw ShapeError("seam_metric needs width >= 2, got " + s.str());
    const std::size_t rows = s.numel() / s.width;
    double seam = 0.0;
    double interior = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = video.raw() + r * s.width;
        seam += std::fabs(static_cast<double>(row[0]) - row[s.width - 1]);
        for (int c = 0; c + 1 < s.width; ++c)
            interior += std::fabs(static_cast<double>(row[c]) - row[c + 1]);
    }
    SeamReport rep;
    rep.seam_gap = seam / static_cast<double>(rows);
    rep.interior_gap = interior / (static_cast<double>(rows) * (s.width - 1));
    rep.ratio = rep.interior_gap == 0.0 ? 1.0 : rep.seam_gap / rep.interior_gap;
    return rep;
}

VideoTensor duplicate_side_by_side(const VideoTensor& video)
{
    const Shape& s = video.shape();
    Shape d = s;
    d.width = 2 * s.width;
    VideoTensor out(d);
    const std::size_t rows = s.numel() / s.width;
    for (std::size_t r = 0; r < rows; ++r) {
        const float* src = video.raw() + r * s.width;
        float* dst = out.raw() + r * d.width;
        std::copy_n(src, s.width, dst);
        std::copy_n(src, s.width, dst + s.width);
    }
    return out;
}

} // namespace panolab

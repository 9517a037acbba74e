#pragma once

// Inference-time panorama enhancements: per-step latent rotation, circular
// padding for the late half of sampling, and the seam-continuity metric.

#include <optional>

#include "panolab/diffusion.hpp"
#include "panolab/panonet.hpp"

namespace panolab {

struct EnhancementConfig {
    double theta = 1.5707963267948966; ///< radians per step
    bool rotate_latents = true;
    bool circular_late_half = true;
    float adapter_weight = 1.0f;
};

/// theta wrapped into [0, 2pi).
double canonical_theta(double theta) noexcept;

/// Steps with index >= this use circular padding: ceil(n/2).
int circular_from_step(int n_steps) noexcept;

/// Model as a sampler denoiser. Adapter features are recomputed from
/// whatever condition the sampler passes, with the sampler's padding.
Denoiser model_denoiser(Model& model, float adapter_weight);

/// DDIM with the enhancements installed as a step hook. Before every
/// denoiser call the latent and condition are rolled by
/// rotation_columns(width, theta); the accumulated roll is undone on the
/// result. The adapter weight is whatever `denoiser` was built with.
VideoTensor sample_with_enhancements(const Denoiser& denoiser, const std::optional<VideoTensor>& condition,
                                     VideoTensor z_T, const NoiseSchedule& sched, int n_steps,
                                     const EnhancementConfig& cfg);
/// Same, using model_denoiser(model, cfg.adapter_weight).
VideoTensor sample_with_enhancements(Model& model, const std::optional<VideoTensor>& condition, VideoTensor z_T,
                                     const NoiseSchedule& sched, int n_steps, const EnhancementConfig& cfg);

struct SeamReport {
    double seam_gap = 0.0;     ///< mean |v[..., 0] - v[..., W-1]|
    double interior_gap = 0.0; ///< mean |v[..., c] - v[..., c+1]|, c < W-1
    double ratio = 1.0;        ///< seam_gap / interior_gap, 1 when both vanish
};

/// Throws ShapeError for width < 2.
SeamReport seam_metric(const VideoTensor& video);

/// out[..., c] = in[..., c mod W] with doubled width.
VideoTensor duplicate_side_by_side(const VideoTensor& video);

} // namespace panolab

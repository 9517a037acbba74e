#pragma once

// Noise schedules, the closed-form forward process, deterministic DDIM
// sampling and the latitude-weighted noise-prediction loss.

#include <functional>
#include <optional>
#include <vector>

#include "panolab/autodiff.hpp"
#include "panolab/kernels.hpp"
#include "panolab/tensor.hpp"

namespace panolab {

struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars; ///< running product of alphas

    int steps() const noexcept { return static_cast<int>(betas.size()); }
};

/// beta_t = start + t/(T-1) * (end - start), t = 0..T-1.
NoiseSchedule linear_beta_schedule(int steps, double beta_start = 0.00085, double beta_end = 0.012);
/// Schedule from explicit betas, each in (0, 1).
NoiseSchedule schedule_from_betas(std::vector<double> betas);

/// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps
VideoTensor q_sample(const VideoTensor& x0, int t, const VideoTensor& eps, const NoiseSchedule& sched);

/// (x_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)
VideoTensor predict_x0(const VideoTensor& x_t, const VideoTensor& eps_hat, int t, const NoiseSchedule& sched);

/// One deterministic DDIM update from t to t_prev (t_prev < 0 means abar = 1).
/// Writes the clean estimate into *x0_hat when given.
VideoTensor ddim_step(const VideoTensor& x_t, const VideoTensor& eps_hat, int t, int t_prev,
                      const NoiseSchedule& sched, VideoTensor* x0_hat = nullptr);

/// Decreasing timesteps T-1 - floor(i*T/n) for i = 0..n-1.
std::vector<int> ddim_timesteps(int total_steps, int n_steps);

/// What the per-step hook may rewrite before each denoiser call.
struct SamplerState {
    VideoTensor latent;
    std::optional<VideoTensor> condition;
    PadMode pad = PadMode::zeros;
};

using Denoiser = std::function<VideoTensor(const VideoTensor& latent, int t,
                                           const std::optional<VideoTensor>& condition, PadMode pad)>;
using StepHook = std::function<void(int step, SamplerState& state)>;

/// Deterministic (eta = 0) DDIM from z_T. The hook runs once per step before
/// the denoiser sees the state. Returns the final clean estimate.
VideoTensor ddim_sample(const Denoiser& denoiser, VideoTensor z_T, const NoiseSchedule& sched, int n_steps,
                        const StepHook& hook = {}, std::optional<VideoTensor> condition = std::nullopt);

/// Row weights cos((2i - rows + 1) / (2 rows) * pi), repeated across columns.
struct LatitudeWeights {
    int rows = 0;
    int cols = 0;
    std::vector<float> values; ///< rows * cols, row-major

    float at(int i, int j) const noexcept { return values[static_cast<std::size_t>(i) * cols + j]; }
};

LatitudeWeights latitude_weight_matrix(int rows, int cols);
/// All-ones weights; latitude_loss with these is the plain mean squared error.
LatitudeWeights uniform_weights(int rows, int cols);

/// mean((W * (eps - eps_hat))^2), W broadcast over batch, channels and frames.
double latitude_loss(const VideoTensor& eps, const VideoTensor& eps_hat, const LatitudeWeights& w);
double mse(const VideoTensor& a, const VideoTensor& b);

namespace ops {

/// Differentiable latitude_loss with respect to eps_hat (scalar).
Var latitude_loss(const Var& eps_hat, const VideoTensor& eps, const LatitudeWeights& w);

} // namespace ops

} // namespace panolab

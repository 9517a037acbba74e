#include "panolab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "panolab/error.hpp"

namespace panolab {

namespace {

void check_t(int t, const NoiseSchedule& s)
{
    if (t < 0 || t >= s.steps())
        throw ArgumentError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(s.steps()) + ")");
}

void check_weights(const Shape& s, const LatitudeWeights& w)
{
    if (w.rows != s.height || w.cols != s.width)
        throw ShapeError("latitude weights " + std::to_string(w.rows) + "x" + std::to_string(w.cols) +
                         " do not match tensor " + s.str());
}

} // namespace

NoiseSchedule schedule_from_betas(std::vector<double> betas)
{
    if (betas.empty())
        throw ArgumentError("schedule needs at least one step");
    NoiseSchedule s;
    s.betas = std::move(betas);
    double running = 1.0;
    for (double b : s.betas) {
        if (!(b > 0.0 && b < 1.0))
            throw ArgumentError("every beta must lie in (0, 1), got " + std::to_string(b));
        s.alphas.push_back(1.0 - b);
        running *= 1.0 - b;
        s.alpha_bars.push_back(running);
    }
    return s;
}

NoiseSchedule linear_beta_schedule(int steps, double beta_start, double beta_end)
{
    if (steps < 2)
        throw ArgumentError("linear schedule needs T >= 2");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ArgumentError("linear schedule needs 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(steps);
    for (int t = 0; t < steps; ++t) {
        const double s = static_cast<double>(t) / (steps - 1);
        // blend form lands exactly on both endpoints
        betas[t] = beta_start * (1.0 - s) + beta_end * s;
    }
    return schedule_from_betas(std::move(betas));
}

VideoTensor q_sample(const VideoTensor& x0, int t, const VideoTensor& eps, const NoiseSchedule& sched)
{
    require_same_shape(x0.shape(), eps.shape(), "q_sample");
    check_t(t, sched);
    const double a = std::sqrt(sched.alpha_bars[t]);
    const double b = std::sqrt(1.0 - sched.alpha_bars[t]);
    VideoTensor out(x0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.raw()[i] = static_cast<float>(a * x0.raw()[i] + b * eps.raw()[i]);
    return out;
}

VideoTensor predict_x0(const VideoTensor& x_t, const VideoTensor& eps_hat, int t, const NoiseSchedule& sched)
{
    require_same_shape(x_t.shape(), eps_hat.shape(), "predict_x0");
    check_t(t, sched);
    const double a = std::sqrt(sched.alpha_bars[t]);
    const double b = std::sqrt(1.0 - sched.alpha_bars[t]);
    VideoTensor out(x_t.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.raw()[i] = static_cast<float>((x_t.raw()[i] - b * eps_hat.raw()[i]) / a);
    return out;
}

VideoTensor ddim_step(const VideoTensor& x_t, const VideoTensor& eps_hat, int t, int t_prev,
                      const NoiseSchedule& sched, VideoTensor* x0_hat)
{
    require_same_shape(x_t.shape(), eps_hat.shape(), "ddim_step");
    check_t(t, sched);
    if (t_prev >= t)
        throw ArgumentError("ddim_step needs t_prev < t");
    const double a = std::sqrt(sched.alpha_bars[t]);
    const double b = std::sqrt(1.0 - sched.alpha_bars[t]);
    const double abar_prev = t_prev < 0 ? 1.0 : sched.alpha_bars[t_prev];
    const double ap = std::sqrt(abar_prev);
    const double bp = std::sqrt(1.0 - abar_prev);
    VideoTensor out(x_t.shape());
    if (x0_hat)
        *x0_hat = VideoTensor(x_t.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double e = eps_hat.raw()[i];
        const double x0 = (x_t.raw()[i] - b * e) / a;
        out.raw()[i] = static_cast<float>(ap * x0 + bp * e);
        if (x0_hat)
            x0_hat->raw()[i] = static_cast<float>(x0);
    }
    return out;
}

std::vector<int> ddim_timesteps(int total_steps, int n_steps)
{
    if (n_steps < 1)
        throw ArgumentError("DDIM needs at least one step");
    if (n_steps > total_steps)
        throw ArgumentError("DDIM steps (" + std::to_string(n_steps) + ") exceed schedule length (" +
                            std::to_string(total_steps) + ")");
    std::vector<int> ts(n_steps);
    for (int i = 0; i < n_steps; ++i)
        ts[i] = total_steps - 1 - static_cast<int>(static_cast<long long>(i) * total_steps / n_steps);
    return ts;
}

VideoTensor ddim_sample(const Denoiser& denoiser, VideoTensor z_T, const NoiseSchedule& sched, int n_steps,
                        const StepHook& hook, std::optional<VideoTensor> condition)
{
    const std::vector<int> ts = ddim_timesteps(sched.steps(), n_steps);
    SamplerState state{std::move(z_T), std::move(condition), PadMode::zeros};
    VideoTensor x0_hat;
    for (int i = 0; i < n_steps; ++i) {
        if (hook)
            hook(i, state);
        const Shape before = state.latent.shape();
        const VideoTensor eps = denoiser(state.latent, ts[i], state.condition, state.pad);
        require_same_shape(eps.shape(), before, "denoiser output");
        const int t_prev = i + 1 < n_steps ? ts[i + 1] : -1;
        state.latent = ddim_step(state.latent, eps, ts[i], t_prev, sched, &x0_hat);
    }
    return x0_hat;
}

LatitudeWeights latitude_weight_matrix(int rows, int cols)
{
    if (rows < 1 || cols < 1)
        throw ArgumentError("latitude weights need rows, cols >= 1");
    LatitudeWeights w{rows, cols, std::vector<float>(static_cast<std::size_t>(rows) * cols)};
    for (int i = 0; i < rows; ++i) {
        const int num = 2 * i - rows + 1;
        const auto v = static_cast<float>(std::cos(static_cast<double>(num) / (2.0 * rows) * std::numbers::pi));
        std::fill_n(w.values.begin() + static_cast<std::ptrdiff_t>(i) * cols, cols, v);
    }
    return w;
}

LatitudeWeights uniform_weights(int rows, int cols)
{
    if (rows < 1 || cols < 1)
        throw ArgumentError("weights need rows, cols >= 1");
    return {rows, cols, std::vector<float>(static_cast<std::size_t>(rows) * cols, 1.0f)};
}

double latitude_loss(const VideoTensor& eps, const VideoTensor& eps_hat, const LatitudeWeights& w)
{
    require_same_shape(eps.shape(), eps_hat.shape(), "latitude_loss");
    check_weights(eps.shape(), w);
    const std::size_t plane = eps.shape().plane();
    double acc = 0.0;
    for (std::size_t i = 0; i < eps.numel(); ++i) {
        const double r = static_cast<double>(w.values[i % plane]) * (static_cast<double>(eps.raw()[i]) - eps_hat.raw()[i]);
        acc += r * r;
    }
    return acc / static_cast<double>(eps.numel());
}

double mse(const VideoTensor& a, const VideoTensor& b)
{
    require_same_shape(a.shape(), b.shape(), "mse");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double r = static_cast<double>(a.raw()[i]) - b.raw()[i];
        acc += r * r;
    }
    return acc / static_cast<double>(a.numel());
}

namespace ops {

Var latitude_loss(const Var& eps_hat, const VideoTensor& eps, const LatitudeWeights& w)
{
    if (!eps_hat.valid())
        throw ArgumentError("latitude_loss: invalid input");
    Tape& t = eps_hat.tape();
    const double loss = panolab::latitude_loss(eps, eps_hat.value(), w);
    Var out = t.record(VideoTensor(Shape{}, static_cast<float>(loss)), t.requires_grad(eps_hat),
                       [&t, eps_hat, eps, w](const VideoTensor& g) {
                           const VideoTensor& xh = eps_hat.value();
                           const std::size_t plane = xh.shape().plane();
                           const double k = -2.0 * g.raw()[0] / static_cast<double>(xh.numel());
                           VideoTensor gx(xh.shape());
                           for (std::size_t i = 0; i < gx.numel(); ++i) {
                               const double wi = w.values[i % plane];
                               gx.raw()[i] = static_cast<float>(k * wi * wi * (static_cast<double>(eps.raw()[i]) - xh.raw()[i]));
                           }
                           t.accumulate(eps_hat, gx);
                       });
    t.set_scalar(out, loss);
    return out;
}

} // namespace ops

} // namespace panolab

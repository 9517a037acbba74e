// Times the OpenMP kernels against the serial reference on one layer shape
// and checks that both produce bit-identical results.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>

#include "CLI11.hpp"
#include "panolab/kernels.hpp"

using namespace panolab;

namespace {

VideoTensor random_tensor(const Shape& s, std::mt19937_64& rng)
{
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    VideoTensor t(s);
    for (float& v : t.data())
        v = u(rng);
    return t;
}

double seconds_per_call(const std::function<void()>& fn, int reps)
{
    fn(); // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i)
        fn();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

struct Row {
    const char* name;
    std::function<VideoTensor()> parallel;
    std::function<VideoTensor()> serial;
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"panolab kernel benchmark: OpenMP vs serial reference"};
    int batch = 2, channels = 8, out_channels = 8, frames = 8, height = 32, width = 64, reps = 5, stride = 1;
    bool circular = false;
    app.add_option("--batch", batch);
    app.add_option("--channels", channels);
    app.add_option("--out-channels", out_channels);
    app.add_option("--frames", frames);
    app.add_option("--height", height);
    app.add_option("--width", width);
    app.add_option("--stride", stride)->check(CLI::IsMember({1, 2}));
    app.add_option("--reps", reps)->check(CLI::PositiveNumber);
    app.add_flag("--circular", circular);
    CLI11_PARSE(app, argc, argv);

    std::mt19937_64 rng(1);
    const PadMode pad = circular ? PadMode::circular : PadMode::zeros;
    const Shape xs{batch, channels, frames, height, width};
    const VideoTensor x = random_tensor(xs, rng);
    const VideoTensor k2 = random_tensor(Shape{out_channels, channels, 1, 3, 3}, rng);
    const VideoTensor kt = random_tensor(Shape{out_channels, channels, 3, 1, 1}, rng);
    const VideoTensor bias = random_tensor(Shape{out_channels, 1, 1, 1, 1}, rng);
    const VideoTensor g2 = random_tensor(Shape{batch, out_channels, frames, height / stride, width / stride}, rng);
    const VideoTensor gt = random_tensor(Shape{batch, out_channels, frames, height, width}, rng);
    const VideoTensor gamma = random_tensor(Shape{channels, 1, 1, 1, 1}, rng);
    const VideoTensor gn = random_tensor(xs, rng);

    auto conv_grad = [&](auto backward, bool input) {
        return [&, backward, input] {
            VideoTensor gx, gk;
            kernels::GradTargets t;
            (input ? t.input : t.kernel) = input ? &gx : &gk;
            backward(x, k2, stride, pad, g2, t);
            return input ? gx : gk;
        };
    };
    auto temporal_grad = [&](auto backward, bool input) {
        return [&, backward, input] {
            VideoTensor gx, gk;
            kernels::GradTargets t;
            (input ? t.input : t.kernel) = input ? &gx : &gk;
            backward(x, kt, gt, t);
            return input ? gx : gk;
        };
    };
    auto norm_fwd = [&](auto forward) {
        return [&, forward] {
            kernels::NormStats st;
            return forward(x, gamma, bias.numel() == gamma.numel() ? bias : gamma, 1e-5f, st);
        };
    };

    const Row rows[] = {
        {"conv2d forward", [&] { return kernels::conv2d_forward(x, k2, &bias, stride, pad); },
         [&] { return kernels::reference::conv2d_forward(x, k2, &bias, stride, pad); }},
        {"conv2d grad input", conv_grad(kernels::conv2d_backward, true),
         conv_grad(kernels::reference::conv2d_backward, true)},
        {"conv2d grad kernel", conv_grad(kernels::conv2d_backward, false),
         conv_grad(kernels::reference::conv2d_backward, false)},
        {"temporal forward", [&] { return kernels::temporal_conv_forward(x, kt, &bias); },
         [&] { return kernels::reference::temporal_conv_forward(x, kt, &bias); }},
        {"temporal grad input", temporal_grad(kernels::temporal_conv_backward, true),
         temporal_grad(kernels::reference::temporal_conv_backward, true)},
        {"temporal grad kernel", temporal_grad(kernels::temporal_conv_backward, false),
         temporal_grad(kernels::reference::temporal_conv_backward, false)},
        {"norm forward", norm_fwd(kernels::channel_norm_forward), norm_fwd(kernels::reference::channel_norm_forward)},
        {"silu forward", [&] { return kernels::silu_forward(gn); }, [&] { return kernels::reference::silu_forward(gn); }},
    };

    std::printf("shape %s, kernel %d->%d, stride %d, %s padding, %d thread(s)\n", xs.str().c_str(), channels,
                out_channels, stride, circular ? "circular" : "zero", kernels::thread_count());
    std::printf("%-22s %12s %12s %8s %s\n", "kernel", "openmp ms", "serial ms", "speedup", "identical");
    bool all_same = true;
    for (const Row& r : rows) {
        const bool same = r.parallel().bit_equal(r.serial());
        all_same = all_same && same;
        const double tp = seconds_per_call([&] { r.parallel(); }, reps);
        const double ts = seconds_per_call([&] { r.serial(); }, reps);
        std::printf("%-22s %12.3f %12.3f %8.2f %s\n", r.name, tp * 1e3, ts * 1e3, ts / tp, same ? "yes" : "NO");
    }
    return all_same ? 0 : 1;
}

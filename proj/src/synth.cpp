#include "panolab/synth.hpp"

#include <cmath>
#include <random>
#include <string>

#include "panolab/error.hpp"

namespace panolab {

namespace {

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

bool unit(const Vec3& v) { return std::abs(norm(v) - 1.0) < 1e-9; }

Vec3 random_direction(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    for (;;) {
        const Vec3 v{n(rng), n(rng), n(rng)};
        if (norm(v) > 1e-6)
            return normalized(v);
    }
}

// Angle between unit vectors, accurate near zero.
double angle_between(const Vec3& a, const Vec3& b)
{
    const Vec3 c{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
    return std::atan2(norm(c), a[0] * b[0] + a[1] * b[1] + a[2] * b[2]);
}

} // namespace

void validate_scene(const SceneSpec& s)
{
    if (s.height < 1 || s.width != 2 * s.height)
        throw ArgumentError("scene needs width == 2 * height >= 2, got " + std::to_string(s.width) + "x" +
                            std::to_string(s.height));
    if (s.frames < 1)
        throw ArgumentError("scene needs at least one frame");
    if (!unit(s.axis))
        throw ArgumentError("rotation axis must be a unit vector");
    if (!(std::abs(s.omega) < 3.141592653589793))
        throw ArgumentError("scene needs |omega| < pi");
    for (std::size_t i = 0; i < s.blobs.size(); ++i) {
        const Blob& b = s.blobs[i];
        const std::string which = "blob " + std::to_string(i);
        if (!unit(b.center))
            throw ArgumentError(which + ": centre must be a unit vector");
        if (!(b.width > 0.0) || !std::isfinite(b.width))
            throw ArgumentError(which + ": width must be positive");
        for (double c : b.color)
            if (!(c >= 0.0 && c <= 1.0))
                throw ArgumentError(which + ": colour components must lie in [0, 1]");
    }
}

SceneSpec random_scene(std::uint64_t seed, int frames, int height)
{
    std::mt19937_64 rng(seed);
    SceneSpec s;
    s.seed = seed;
    s.frames = frames;
    s.height = height;
    s.width = 2 * height;
    const int n = std::uniform_int_distribution<int>(3, 6)(rng);
    std::uniform_real_distribution<double> width(0.15, 0.5);
    std::uniform_real_distribution<double> colour(0.2, 1.0);
    for (int i = 0; i < n; ++i) {
        Blob b;
        b.center = random_direction(rng);
        b.width = width(rng);
        for (double& c : b.color)
            c = colour(rng);
        s.blobs.push_back(b);
    }
    s.axis = random_direction(rng);
    s.omega = std::uniform_real_distribution<double>(-0.12, 0.12)(rng);
    validate_scene(s);
    return s;
}

RenderedScene render_sequence(const SceneSpec& spec)
{
    validate_scene(spec);
    const int H = spec.height, W = spec.width, F = spec.frames;
    RenderedScene out{VideoTensor(Shape{1, 3, F, H, W}), rotation_flow(spec.axis, spec.omega, W, H, F)};

    std::vector<Vec3> dirs(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            dirs[static_cast<std::size_t>(y) * W + x] = erp_pixel_to_dir(x, y, W, H);

#pragma omp parallel for schedule(static)
    for (int f = 0; f < F; ++f) {
        std::vector<Vec3> centers;
        for (const Blob& b : spec.blobs)
            centers.push_back(rotate_about(b.center, spec.axis, f * spec.omega));
        for (std::size_t i = 0; i < dirs.size(); ++i) {
            std::array<double, 3> keep{1.0, 1.0, 1.0};
            for (std::size_t k = 0; k < centers.size(); ++k) {
                const double a = angle_between(dirs[i], centers[k]) / spec.blobs[k].width;
                const double g = std::exp(-a * a);
                for (int c = 0; c < 3; ++c)
                    keep[c] *= 1.0 - spec.blobs[k].color[c] * g;
            }
            for (int c = 0; c < 3; ++c)
                out.video.plane(0, c, f)[i] = static_cast<float>(1.0 - keep[c]);
        }
    }
    return out;
}

} // namespace panolab

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "panolab/enhance.hpp"
#include "panolab/error.hpp"
#include "panolab/sphere.hpp"
#include "test_util.hpp"

using namespace panolab;
using panolab::testing::random_tensor;

namespace {

constexpr double pi = std::numbers::pi;

VideoTensor seeded(Shape s, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f)
{
    std::mt19937_64 rng(seed);
    return random_tensor(s, rng, lo, hi);
}

Model lab_model(std::uint64_t seed)
{
    Model m;
    m.unet.channels = {8, 8, 16, 16};
    m.unet.frames = 2;
    m.adapter.channels = m.unet.channels;
    m.adapter.unshuffle_factor = 1;
    init_denoiser(m.params, m.unet, seed);
    init_adapter(m.params, m.adapter, seed);
    for (Parameter* p : m.params.all())
        if (p->name.starts_with("unet.conv_out.") || p->name.ends_with("out.weight"))
            p->value = seeded(p->value.shape(), seed + p->value.numel(), -0.2f, 0.2f);
    return m;
}

const Shape latent{1, 3, 2, 16, 32};
const Shape cond_shape{1, 2, 2, 16, 32};

VideoTensor row_tensor(std::vector<float> row)
{
    const int w = static_cast<int>(row.size());
    return VideoTensor(Shape{1, 1, 1, 1, w}, std::move(row));
}

} // namespace

TEST_CASE("theta canonicalization and the late-half boundary")
{
    CHECK(canonical_theta(0.0) == 0.0);
    CHECK(canonical_theta(2.0 * pi) == 0.0);
    CHECK(canonical_theta(-pi / 2) == doctest::Approx(1.5 * pi));
    CHECK(canonical_theta(5.0 * pi) == doctest::Approx(pi));
    CHECK(circular_from_step(25) == 13);
    CHECK(circular_from_step(4) == 2);
    CHECK(circular_from_step(1) == 1);
}

TEST_CASE("hook rolls latent and condition each step and switches padding late")
{
    const NoiseSchedule sched = linear_beta_schedule(1000);
    const VideoTensor cond = seeded(cond_shape, 1);
    const VideoTensor z = seeded(latent, 2);
    const int n = 5;
    std::vector<PadMode> pads;
    std::vector<VideoTensor> seen;
    const Denoiser spy = [&](const VideoTensor& x, int, const std::optional<VideoTensor>& c, PadMode pad) {
        REQUIRE(c.has_value());
        CHECK(x.shape() == latent);
        pads.push_back(pad);
        seen.push_back(*c);
        return VideoTensor(x.shape());
    };
    EnhancementConfig cfg;
    cfg.theta = pi / 2;
    sample_with_enhancements(spy, cond, z, sched, n, cfg);
    REQUIRE(pads.size() == 5);
    for (int i = 0; i < n; ++i) {
        CHECK(pads[i] == (i >= 3 ? PadMode::circular : PadMode::zeros));
        CHECK(seen[i] == roll_columns(cond, (i + 1) * 8 % 32));
    }
}

TEST_CASE("with a zero denoiser the rotation bookkeeping closes exactly")
{
    const NoiseSchedule sched = linear_beta_schedule(1000);
    const Denoiser zero = [](const VideoTensor& x, int, const std::optional<VideoTensor>&, PadMode) {
        return VideoTensor(x.shape());
    };
    const VideoTensor z = seeded(latent, 3);
    for (int n : {1, 7, 25})
        for (double theta : {pi / 2, 1.0, 5.5, -2.0}) {
            EnhancementConfig cfg;
            cfg.theta = theta;
            const VideoTensor plain = ddim_sample(zero, z, sched, n);
            CHECK(sample_with_enhancements(zero, std::nullopt, z, sched, n, cfg).bit_equal(plain));
        }
}

TEST_CASE("disabled enhancements reproduce plain DDIM bit for bit")
{
    Model m = lab_model(4);
    const NoiseSchedule sched = linear_beta_schedule(1000);
    const VideoTensor cond = seeded(cond_shape, 5);
    const VideoTensor z = seeded(latent, 6);
    EnhancementConfig cfg;
    cfg.rotate_latents = false;
    cfg.circular_late_half = false;
    const VideoTensor plain = ddim_sample(model_denoiser(m, 1.0f), z, sched, 6, {}, cond);
    CHECK(sample_with_enhancements(m, cond, z, sched, 6, cfg).bit_equal(plain));

    cfg.adapter_weight = 0.0f;
    const VideoTensor unconditioned = sample_with_enhancements(m, std::nullopt, z, sched, 6, cfg);
    CHECK(sample_with_enhancements(m, cond, z, sched, 6, cfg).bit_equal(unconditioned));
}

TEST_CASE("a full turn is the same as no rotation")
{
    Model m = lab_model(7);
    const NoiseSchedule sched = linear_beta_schedule(1000);
    const VideoTensor cond = seeded(cond_shape, 8);
    const VideoTensor z = seeded(latent, 9);
    EnhancementConfig full;
    full.theta = 2.0 * pi;
    EnhancementConfig none;
    none.theta = 0.0;
    const VideoTensor a = sample_with_enhancements(m, cond, z, sched, 5, full);
    CHECK(a.bit_equal(sample_with_enhancements(m, cond, z, sched, 5, none)));
    CHECK(a.all_finite());

    EnhancementConfig quarter;
    CHECK_FALSE(a == sample_with_enhancements(m, cond, z, sched, 5, quarter));
}

// Three stride-2 downsamples make the network equivariant to shifts by
// multiples of 8 columns once every convolution wraps around.
TEST_CASE("fully circular sampling commutes with column shifts")
{
    Model m = lab_model(10);
    const NoiseSchedule sched = linear_beta_schedule(1000);
    const StepHook circular = [](int, SamplerState& s) { s.pad = PadMode::circular; };
    const Denoiser d = model_denoiser(m, 1.0f);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const VideoTensor cond = seeded(cond_shape, 20 + seed);
        const VideoTensor z = seeded(latent, 30 + seed);
        const VideoTensor base = ddim_sample(d, z, sched, 4, circular, cond);
        for (int k : {8, 16, 24}) {
            const VideoTensor shifted =
                ddim_sample(d, roll_columns(z, k), sched, 4, circular, roll_columns(cond, k));
            CHECK(shifted.bit_equal(roll_columns(base, k)));
        }
    }
}

TEST_CASE("mismatched condition is rejected")
{
    Model m = lab_model(0);
    const NoiseSchedule sched = linear_beta_schedule(1000);
    CHECK_THROWS_AS(sample_with_enhancements(m, VideoTensor(Shape{1, 2, 2, 16, 16}), VideoTensor(latent), sched, 2,
                                             EnhancementConfig{}),
                    ShapeError);
}

TEST_CASE("seam metric examples")
{
    const SeamReport flat = seam_metric(VideoTensor(Shape{2, 3, 2, 4, 8}, 0.25f));
    CHECK(flat.seam_gap == 0.0);
    CHECK(flat.interior_gap == 0.0);
    CHECK(flat.ratio == 1.0);

    const SeamReport ramp = seam_metric(row_tensor({0, 1, 2, 3, 4, 5, 6, 7}));
    CHECK(ramp.seam_gap == 7.0);
    CHECK(ramp.interior_gap == 1.0);
    CHECK(ramp.ratio == 7.0);

    CHECK_THROWS_AS(seam_metric(VideoTensor(Shape{1, 1, 1, 4, 1})), ShapeError);
}

// A periodic signal has no seam excess: the seam pair is one of the W
// circular neighbour pairs. Which pair it is depends on the phase, so a
// single phase can land anywhere in the gap distribution.
TEST_CASE("periodic signals have no seam excess")
{
    const int w = 8;
    auto wave = [&](double phase) {
        std::vector<float> row(w);
        for (int c = 0; c < w; ++c)
            row[c] = static_cast<float>(std::sin(2.0 * pi * c / w + phase));
        return row;
    };

    // Peak at the seam: the seam pair is one of the flattest.
    CHECK(seam_metric(row_tensor(wave(pi / 2))).ratio <= 1.0);

    // Zero crossing at the seam: the seam pair is one of the steepest. Hand
    // values: seam sin(pi/4), interior (3 sin(pi/4) + 4 (1 - sin(pi/4))) / 7.
    const double s = std::sin(pi / 4);
    CHECK(seam_metric(row_tensor(wave(0.0))).ratio == doctest::Approx(s / ((3 * s + 4 * (1 - s)) / 7)).epsilon(1e-6));

    // Over every whole-column phase, seam and interior gaps have the same mean.
    double seam = 0.0, interior = 0.0;
    for (int k = 0; k < w; ++k) {
        const SeamReport r = seam_metric(row_tensor(wave(2.0 * pi * k / w)));
        seam += r.seam_gap;
        interior += r.interior_gap;
    }
    CHECK(seam / interior == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("seam gap after a rotation is the adjacent gap at the new seam")
{
    std::mt19937_64 rng(40);
    const VideoTensor v = random_tensor(Shape{1, 1, 1, 1, 16}, rng);
    for (int k = 1; k < 16; ++k) {
        const double theta = 2.0 * pi * k / 16;
        const SeamReport r = seam_metric(rotate_erp(v, theta));
        const int j = rotation_columns(16, theta);
        CHECK(r.seam_gap == doctest::Approx(std::fabs(static_cast<double>(v.raw()[j]) - v.raw()[j - 1])));
    }
    const VideoTensor ramp = row_tensor({0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(seam_metric(rotate_erp(ramp, 2.0 * pi * 3 / 8)).seam_gap == 1.0);
}

TEST_CASE("duplicate side by side")
{
    const VideoTensor d = duplicate_side_by_side(row_tensor({1, 2, 3, 4}));
    CHECK(d == row_tensor({1, 2, 3, 4, 1, 2, 3, 4}));

    std::mt19937_64 rng(41);
    const VideoTensor v = random_tensor(Shape{2, 3, 2, 4, 8}, rng);
    const VideoTensor dv = duplicate_side_by_side(v);
    CHECK(dv.shape() == Shape{2, 3, 2, 4, 16});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y) {
            CHECK(dv.at(1, c, 1, y, 7) == v.at(1, c, 1, y, 7));
            CHECK(dv.at(1, c, 1, y, 8) == v.at(1, c, 1, y, 0));
            CHECK(dv.at(1, c, 1, y, 13) == v.at(1, c, 1, y, 5));
        }
    // The original seam becomes the centre pair.
    double centre = 0.0;
    for (int r = 0; r < 2 * 3 * 2 * 4; ++r)
        centre += std::fabs(static_cast<double>(dv.raw()[r * 16 + 7]) - dv.raw()[r * 16 + 8]);
    CHECK(centre / 48 == doctest::Approx(seam_metric(v).seam_gap));

    const VideoTensor flat = duplicate_side_by_side(VideoTensor(Shape{1, 1, 2, 3, 5}, 0.5f));
    for (float x : flat.data())
        CHECK(x == 0.5f);
}

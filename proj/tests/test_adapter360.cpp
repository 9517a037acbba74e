#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <string>

#include "panolab/adapter.hpp"
#include "panolab/error.hpp"
#include "test_util.hpp"

using namespace panolab;
using panolab::testing::random_tensor;

namespace {

// Small widths keep the tests fast; the pipeline is the same.
AdapterConfig small_config(int factor)
{
    AdapterConfig cfg;
    cfg.channels = {4, 6, 8, 8};
    cfg.unshuffle_factor = factor;
    return cfg;
}

VideoTensor integer_tensor(Shape s, std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> d(-64, 64);
    VideoTensor t(s);
    for (float& v : t.data())
        v = static_cast<float>(d(rng));
    return t;
}

// Output convs drawn like the other layers, so features are nonzero.
void randomize_outputs(ParamSet& ps, std::uint64_t seed)
{
    for (Parameter* p : ps.with_prefix("adapter."))
        if (p->name.ends_with("out.weight") || p->name.ends_with(".bias")) {
            std::mt19937_64 rng(seed + p->value.numel());
            p->value = random_tensor(p->value.shape(), rng, -0.3f, 0.3f);
        }
}

// Moves frame a to b and b to a.
VideoTensor swap_frames(const VideoTensor& x, int a, int b)
{
    VideoTensor out = x;
    const Shape& s = x.shape();
    for (int n = 0; n < s.batch; ++n)
        for (int c = 0; c < s.channels; ++c) {
            std::copy_n(x.plane(n, c, a), s.plane(), out.plane(n, c, b));
            std::copy_n(x.plane(n, c, b), s.plane(), out.plane(n, c, a));
        }
    return out;
}

} // namespace

TEST_CASE("feature shapes for a 64x128 condition with factor 8")
{
    const AdapterConfig cfg; // 16/32/64/64, factor 8
    ParamSet ps;
    init_adapter(ps, cfg, 3);
    std::mt19937_64 rng(1);
    const Shape cs{1, 2, 8, 64, 128};
    const AdapterFeatures f = adapter_forward(ps, random_tensor(cs, rng), cs, cfg);
    CHECK(f[0].shape() == Shape{1, 16, 8, 8, 16});
    CHECK(f[1].shape() == Shape{1, 32, 8, 4, 8});
    CHECK(f[2].shape() == Shape{1, 64, 8, 2, 4});
    CHECK(f[3].shape() == Shape{1, 64, 8, 1, 2});
    for (int k = 0; k + 1 < 4; ++k) {
        CHECK(f[k + 1].shape().height == (f[k].shape().height + 1) / 2);
        CHECK(f[k + 1].shape().frames == f[k].shape().frames);
    }
}

TEST_CASE("ZERO and an explicit zero tensor give bit-identical features")
{
    for (int factor : {1, 2}) {
        const AdapterConfig cfg = small_config(factor);
        ParamSet ps;
        init_adapter(ps, cfg, 5);
        randomize_outputs(ps, 9);
        const Shape cs{2, 2, 3, 8 * factor, 16 * factor};
        const AdapterFeatures a = adapter_forward(ps, std::nullopt, cs, cfg);
        const AdapterFeatures b = adapter_forward(ps, VideoTensor(cs), cs, cfg);
        for (int k = 0; k < 4; ++k)
            CHECK(a[k].bit_equal(b[k]));
    }
}

TEST_CASE("zero-initialized output convolutions give zero features")
{
    const AdapterConfig cfg = small_config(2);
    ParamSet ps;
    init_adapter(ps, cfg, 11);
    for (Parameter* p : ps.with_prefix("adapter."))
        if (p->name.ends_with("out.weight"))
            for (float v : p->value.data())
                REQUIRE(v == 0.0f);

    std::mt19937_64 rng(2);
    const Shape cs{1, 2, 4, 16, 32};
    for (const auto& cond : {std::optional<VideoTensor>{}, std::optional<VideoTensor>{random_tensor(cs, rng)}}) {
        const AdapterFeatures f = adapter_forward(ps, cond, cs, cfg);
        for (int k = 0; k < 4; ++k)
            for (float v : f[k].data())
                CHECK(v == 0.0f);
    }
}

TEST_CASE("indivisible condition extents are rejected with the required divisor")
{
    const AdapterConfig cfg = small_config(2);
    ParamSet ps;
    init_adapter(ps, cfg, 0);
    for (const Shape& s : {Shape{1, 2, 1, 24, 32}, Shape{1, 2, 1, 16, 40}}) {
        try {
            adapter_forward(ps, std::nullopt, s, cfg);
            FAIL("accepted " << s.str());
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("divisible by 16") != std::string::npos);
        }
    }
    CHECK_THROWS_AS(adapter_forward(ps, std::nullopt, Shape{1, 3, 1, 16, 32}, cfg), ShapeError);

    AdapterConfig bad = cfg;
    bad.channels[2] = 0;
    ParamSet none;
    CHECK_THROWS_AS(init_adapter(none, bad, 0), ArgumentError);
}

TEST_CASE("temporal identity kernels make the adapter frame-permutation equivariant")
{
    const AdapterConfig cfg = small_config(1);
    ParamSet ps;
    init_adapter(ps, cfg, 7);
    randomize_outputs(ps, 4);
    std::mt19937_64 rng(8);
    const Shape cs{1, 2, 5, 8, 16};
    const VideoTensor cond = random_tensor(cs, rng);

    // With the learned temporal kernels, swapping frames does not commute.
    {
        const AdapterFeatures a = adapter_forward(ps, swap_frames(cond, 0, 3), cs, cfg);
        const AdapterFeatures b = adapter_forward(ps, cond, cs, cfg);
        CHECK_FALSE(a[0] == swap_frames(b[0], 0, 3));
    }

    for (Parameter* p : ps.with_prefix("adapter."))
        if (p->name.ends_with("rb.temporal.weight")) {
            p->value.fill(0.0f);
            const int c = p->value.shape().batch;
            for (int i = 0; i < c; ++i)
                p->value.at(i, i, 1, 0, 0) = 1.0f;
        }
    const AdapterFeatures a = adapter_forward(ps, swap_frames(cond, 0, 3), cs, cfg);
    const AdapterFeatures b = adapter_forward(ps, cond, cs, cfg);
    for (int k = 0; k < 4; ++k)
        CHECK(a[k].bit_equal(swap_frames(b[k], 0, 3)));
}

TEST_CASE("inject_features")
{
    SUBCASE("hand example")
    {
        const Shape s{1, 1, 1, 1, 2};
        std::array<VideoTensor, 4> enc;
        AdapterFeatures f;
        for (int k = 0; k < 4; ++k) {
            enc[k] = VideoTensor(s, {1.0f, 2.0f});
            f[k] = VideoTensor(s, {0.5f, -1.0f});
        }
        const auto two = inject_features(enc, f, 2.0f);
        const auto one = inject_features(enc, f, 1.0f);
        for (int k = 0; k < 4; ++k) {
            CHECK(two[k] == VideoTensor(s, {2.0f, 0.0f}));
            CHECK(one[k] == VideoTensor(s, {1.5f, 1.0f}));
        }
    }

    std::mt19937_64 rng(3);
    std::array<VideoTensor, 4> enc;
    AdapterFeatures f;
    for (int k = 0; k < 4; ++k) {
        const Shape s{2, 3 + k, 2, 8 >> k, 16 >> k};
        enc[k] = random_tensor(s, rng);
        f[k] = random_tensor(s, rng, -1e3f, 1e3f);
    }
    enc[1].raw()[0] = -0.0f;
    f[1].raw()[0] = 0.0f;

    SUBCASE("w = 0 is the identity, bit for bit")
    {
        const auto out = inject_features(enc, f, 0.0f);
        for (int k = 0; k < 4; ++k)
            CHECK(out[k].bit_equal(enc[k]));
    }

    SUBCASE("w = 1 is elementwise addition")
    {
        const auto out = inject_features(enc, f, 1.0f);
        for (int k = 0; k < 4; ++k)
            for (std::size_t i = 0; i < enc[k].numel(); ++i)
                CHECK(out[k].raw()[i] == enc[k].raw()[i] + f[k].raw()[i]);
    }

    SUBCASE("mismatched scale is named")
    {
        AdapterFeatures bad = f;
        bad[2] = VideoTensor(Shape{2, 5, 2, 2, 3});
        try {
            inject_features(enc, bad, 1.0f);
            FAIL("accepted a mismatched scale");
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("scale 3") != std::string::npos);
        }
    }
}

// Integer-valued features and dyadic weights keep every float operation
// exact, so linearity can be asserted element for element.
TEST_CASE("inject_features is linear in w")
{
    std::mt19937_64 rng(12);
    std::array<VideoTensor, 4> enc;
    AdapterFeatures f;
    for (int k = 0; k < 4; ++k) {
        const Shape s{1, 2, 3, 4, 8};
        enc[k] = integer_tensor(s, rng);
        f[k] = integer_tensor(s, rng);
    }
    const auto base = inject_features(enc, f, 0.0f);
    for (float w1 : {-3.0f, 0.5f, 2.0f})
        for (float w2 : {-1.0f, 1.0f, 4.0f}) {
            const auto a = inject_features(enc, f, w1);
            const auto b = inject_features(enc, f, w2);
            const auto ab = inject_features(enc, f, w1 + w2);
            for (int k = 0; k < 4; ++k)
                for (std::size_t i = 0; i < enc[k].numel(); ++i)
                    CHECK(a[k].raw()[i] + b[k].raw()[i] - base[k].raw()[i] == ab[k].raw()[i]);
        }
}

TEST_CASE("adapter parameter census")
{
    const AdapterConfig cfg;
    ParamSet ps;
    init_adapter(ps, cfg, 0);
    MESSAGE("adapter parameters (16/32/64/64, factor 8): " << ps.numel("adapter."));
    CHECK(ps.numel("adapter.") == ps.numel());
    CHECK(ps.size() == 4 * 8 + 3 * 2);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "panolab/autodiff.hpp"
#include "panolab/error.hpp"
#include "panolab/exact_sum.hpp"
#include "panolab/kernels.hpp"
#include "panolab/optim.hpp"
#include "test_util.hpp"

using namespace panolab;
using testing::random_int;
using testing::random_tensor;

namespace {

VideoTensor row_kernel(float a, float b, float c)
{
    VideoTensor k(Shape{1, 1, 1, 3, 3});
    k.at(0, 0, 0, 1, 0) = a;
    k.at(0, 0, 0, 1, 1) = b;
    k.at(0, 0, 0, 1, 2) = c;
    return k;
}

VideoTensor conv(const VideoTensor& x, const VideoTensor& k, const VideoTensor* b, int stride, PadMode pad)
{
    return kernels::conv2d_forward(x, k, b, stride, pad);
}

} // namespace

TEST_CASE("conv2d wraps columns under circular padding")
{
    VideoTensor x(Shape{1, 1, 1, 1, 4}, std::vector<float>{1, 2, 3, 4});
    const VideoTensor out = conv(x, row_kernel(1, 0, -1), nullptr, 1, PadMode::circular);
    CHECK(out.data()[0] == 2.0f);
    CHECK(out.data()[1] == -2.0f);
    CHECK(out.data()[2] == -2.0f);
    CHECK(out.data()[3] == 2.0f);

    const VideoTensor zeros = conv(x, row_kernel(1, 0, -1), nullptr, 1, PadMode::zeros);
    CHECK(zeros.data()[0] == -2.0f);
    CHECK(zeros.data()[3] == 3.0f);
}

TEST_CASE("conv2d with zero kernel and bias yields zeros of the right shape")
{
    std::mt19937_64 rng(1);
    const VideoTensor x = random_tensor(Shape{2, 3, 2, 8, 12}, rng);
    const VideoTensor k(Shape{5, 3, 1, 3, 3});
    const VideoTensor b(Shape{5, 1, 1, 1, 1});
    for (int stride : {1, 2}) {
        const VideoTensor out = conv(x, k, &b, stride, PadMode::circular);
        CHECK(out.shape() == Shape{2, 5, 2, 8 / stride, 12 / stride});
        CHECK(std::all_of(out.data().begin(), out.data().end(), [](float v) { return v == 0.0f; }));
    }
}

TEST_CASE("conv2d rejects bad strides and mismatched shapes")
{
    const VideoTensor x(Shape{1, 3, 1, 8, 8});
    const VideoTensor k(Shape{4, 2, 1, 3, 3});
    try {
        conv(x, k, nullptr, 1, PadMode::zeros);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(1,3,1,8,8)") != std::string::npos);
        CHECK(msg.find("(4,2,1,3,3)") != std::string::npos);
    }
    const VideoTensor k3(Shape{4, 3, 1, 3, 3});
    CHECK_THROWS_AS(conv(x, k3, nullptr, 3, PadMode::zeros), ArgumentError);
    CHECK_THROWS_AS(conv(x, VideoTensor(Shape{4, 3, 1, 2, 2}), nullptr, 1, PadMode::zeros), ShapeError);
    CHECK_THROWS_AS(conv(VideoTensor(Shape{1, 3, 1, 8, 2}), k3, nullptr, 1, PadMode::circular), ShapeError);
}

TEST_CASE("circular conv commutes with cyclic column shifts")
{
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const int stride = random_int(rng, 1, 2);
        const int k = 2 * random_int(rng, 0, 2) + 1;
        const int h = stride * random_int(rng, 1, 5);
        const int w = stride * random_int(rng, (k + stride - 1) / stride, 8);
        const Shape xs{random_int(rng, 1, 2), random_int(rng, 1, 3), random_int(rng, 1, 3), h, w};
        const VideoTensor x = random_tensor(xs, rng);
        const VideoTensor kern = random_tensor(Shape{random_int(rng, 1, 3), xs.channels, 1, k, k}, rng);
        const VideoTensor bias = random_tensor(Shape{kern.shape().batch, 1, 1, 1, 1}, rng);
        const int shift = stride * random_int(rng, 0, w / stride);
        const VideoTensor lhs = conv(roll_columns(x, shift), kern, &bias, stride, PadMode::circular);
        const VideoTensor rhs = roll_columns(conv(x, kern, &bias, stride, PadMode::circular), shift / stride);
        REQUIRE(lhs.bit_equal(rhs));
    }
}

TEST_CASE("parallel kernels are bit-identical to the serial reference")
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const int stride = random_int(rng, 1, 2);
        const int k = trial % 4 == 0 ? 1 : 3;
        const PadMode pad = trial % 2 ? PadMode::circular : PadMode::zeros;
        const Shape xs{random_int(rng, 1, 2), random_int(rng, 1, 4), random_int(rng, 1, 3),
                       stride * random_int(rng, 1, 4), 2 * random_int(rng, 2, 5)};
        const VideoTensor x = random_tensor(xs, rng);
        const VideoTensor kern = random_tensor(Shape{random_int(rng, 1, 4), xs.channels, 1, k, k}, rng);
        const VideoTensor bias = random_tensor(Shape{kern.shape().batch, 1, 1, 1, 1}, rng);

        const VideoTensor fast = kernels::conv2d_forward(x, kern, &bias, stride, pad);
        const VideoTensor slow = kernels::reference::conv2d_forward(x, kern, &bias, stride, pad);
        REQUIRE(fast.bit_equal(slow));

        const VideoTensor g = random_tensor(fast.shape(), rng);
        VideoTensor gx1, gk1, gb1, gx2, gk2, gb2;
        kernels::conv2d_backward(x, kern, stride, pad, g, {&gx1, &gk1, &gb1});
        kernels::reference::conv2d_backward(x, kern, stride, pad, g, {&gx2, &gk2, &gb2});
        REQUIRE(gx1.bit_equal(gx2));
        REQUIRE(gk1.bit_equal(gk2));
        REQUIRE(gb1.bit_equal(gb2));

        const VideoTensor tk = random_tensor(Shape{random_int(rng, 1, 3), xs.channels, 3, 1, 1}, rng);
        const VideoTensor tb = random_tensor(Shape{tk.shape().batch, 1, 1, 1, 1}, rng);
        const VideoTensor tf = kernels::temporal_conv_forward(x, tk, &tb);
        REQUIRE(tf.bit_equal(kernels::reference::temporal_conv_forward(x, tk, &tb)));
        const VideoTensor tg = random_tensor(tf.shape(), rng);
        kernels::temporal_conv_backward(x, tk, tg, {&gx1, &gk1, &gb1});
        kernels::reference::temporal_conv_backward(x, tk, tg, {&gx2, &gk2, &gb2});
        REQUIRE(gx1.bit_equal(gx2));
        REQUIRE(gk1.bit_equal(gk2));
        REQUIRE(gb1.bit_equal(gb2));

        const VideoTensor gamma = random_tensor(Shape{xs.channels, 1, 1, 1, 1}, rng, 0.5f, 1.5f);
        const VideoTensor beta = random_tensor(Shape{xs.channels, 1, 1, 1, 1}, rng);
        kernels::NormStats s1, s2;
        const VideoTensor n1 = kernels::channel_norm_forward(x, gamma, beta, 1e-5f, s1);
        const VideoTensor n2 = kernels::reference::channel_norm_forward(x, gamma, beta, 1e-5f, s2);
        REQUIRE(n1.bit_equal(n2));
        const VideoTensor gn = random_tensor(xs, rng);
        kernels::channel_norm_backward(x, gamma, s1, gn, {&gx1, &gk1, &gb1});
        kernels::reference::channel_norm_backward(x, gamma, s2, gn, {&gx2, &gk2, &gb2});
        REQUIRE(gx1.bit_equal(gx2));
        REQUIRE(gk1.bit_equal(gk2));
        REQUIRE(gb1.bit_equal(gb2));

        REQUIRE(kernels::silu_forward(x).bit_equal(kernels::reference::silu_forward(x)));
        REQUIRE(kernels::silu_backward(x, x).bit_equal(kernels::reference::silu_backward(x, x)));
    }
}

TEST_CASE("channel norm input gradients match the reference")
{
    std::mt19937_64 rng(12);
    const Shape xs{2, 3, 2, 4, 6};
    const VideoTensor x = random_tensor(xs, rng);
    const VideoTensor g = random_tensor(xs, rng);
    const VideoTensor gamma = random_tensor(Shape{3, 1, 1, 1, 1}, rng, 0.5f, 1.5f);
    const VideoTensor beta(Shape{3, 1, 1, 1, 1});
    kernels::NormStats st;
    kernels::channel_norm_forward(x, gamma, beta, 1e-5f, st);
    VideoTensor a, b;
    kernels::channel_norm_backward(x, gamma, st, g, {&a, nullptr, nullptr});
    kernels::reference::channel_norm_backward(x, gamma, st, g, {&b, nullptr, nullptr});
    CHECK(a.bit_equal(b));
}

TEST_CASE("order-independent sums")
{
    std::mt19937_64 rng(3);
    const VideoTensor x = random_tensor(Shape{1, 1, 1, 1, 4096}, rng, -1e3f, 1e3f);
    std::vector<float> v(x.data().begin(), x.data().end());
    const double reference = exact_sum(v);
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(v.begin(), v.end(), rng);
        CHECK(exact_sum(v) == reference);
    }
    const double naive = std::accumulate(x.data().begin(), x.data().end(), 0.0);
    CHECK(reference == doctest::Approx(naive).epsilon(1e-9));
    CHECK(exact_sum(std::vector<float>(8, 0.0f)) == 0.0);
}

TEST_CASE("channel norm commutes with cyclic column shifts")
{
    std::mt19937_64 rng(5);
    const VideoTensor x = random_tensor(Shape{2, 3, 3, 4, 10}, rng, -4.0f, 4.0f);
    const VideoTensor gamma = random_tensor(Shape{3, 1, 1, 1, 1}, rng);
    const VideoTensor beta = random_tensor(Shape{3, 1, 1, 1, 1}, rng);
    kernels::NormStats st;
    for (int shift = 0; shift < 10; ++shift) {
        const VideoTensor lhs = kernels::channel_norm_forward(roll_columns(x, shift), gamma, beta, 1e-5f, st);
        const VideoTensor rhs = roll_columns(kernels::channel_norm_forward(x, gamma, beta, 1e-5f, st), shift);
        REQUIRE(lhs.bit_equal(rhs));
    }
}

TEST_CASE("pseudo-3D pair")
{
    std::mt19937_64 rng(9);
    Tape tape(GradMode::off);
    const int c = 3;
    Parameter sk("sk", random_tensor(Shape{c, c, 1, 3, 3}, rng));
    Parameter sb("sb", random_tensor(Shape{c, 1, 1, 1, 1}, rng));
    Parameter tk("tk", VideoTensor(Shape{c, c, 3, 1, 1}));
    Parameter tb("tb", VideoTensor(Shape{c, 1, 1, 1, 1}));

    SUBCASE("zero kernels give zeros")
    {
        Parameter zk("zk", VideoTensor(Shape{c, c, 1, 3, 3}));
        const Var x = tape.constant(random_tensor(Shape{1, c, 4, 6, 8}, rng));
        const Var out = ops::pseudo3d_pair(x, tape.param(zk), Var{}, tape.param(tk), Var{}, PadMode::zeros);
        CHECK(std::all_of(out.value().data().begin(), out.value().data().end(), [](float v) { return v == 0.0f; }));
    }
    SUBCASE("temporal identity tap on one frame equals the spatial conv")
    {
        for (int i = 0; i < c; ++i)
            tk.value.at(i, i, 1, 0, 0) = 1.0f;
        const VideoTensor xv = random_tensor(Shape{2, c, 1, 6, 8}, rng);
        const Var x = tape.constant(xv);
        const Var out = ops::pseudo3d_pair(x, tape.param(sk), tape.param(sb), tape.param(tk), tape.param(tb),
                                           PadMode::circular);
        CHECK(out.value().bit_equal(conv(xv, sk.value, &sb.value, 1, PadMode::circular)));
    }
    SUBCASE("constant-in-time input scales interior frames by the tap sum")
    {
        // Diagonal taps (0.5, 1.25, -0.25) sum to 1.5.
        const float taps[3] = {0.5f, 1.25f, -0.25f};
        for (int i = 0; i < c; ++i)
            for (int t = 0; t < 3; ++t)
                tk.value.at(i, i, t, 0, 0) = taps[t];
        const VideoTensor frame = random_tensor(Shape{1, c, 1, 4, 6}, rng);
        VideoTensor xv(Shape{1, c, 3, 4, 6});
        for (int ch = 0; ch < c; ++ch)
            for (int f = 0; f < 3; ++f)
                for (int y = 0; y < 4; ++y)
                    for (int x = 0; x < 6; ++x)
                        xv.at(0, ch, f, y, x) = frame.at(0, ch, 0, y, x);
        const VideoTensor spatial = conv(frame, sk.value, &sb.value, 1, PadMode::zeros);
        const Var out = ops::pseudo3d_pair(tape.constant(xv), tape.param(sk), tape.param(sb), tape.param(tk),
                                           Var{}, PadMode::zeros);
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 6; ++x)
                    CHECK(out.value().at(0, ch, 1, y, x) ==
                          doctest::Approx(1.5f * spatial.at(0, ch, 0, y, x)).epsilon(1e-5));
    }
    SUBCASE("channel mismatch is rejected")
    {
        Parameter bad("bad", VideoTensor(Shape{c + 1, c, 1, 3, 3}));
        const Var x = tape.constant(VideoTensor(Shape{1, c, 2, 4, 4}));
        CHECK_THROWS_AS(ops::pseudo3d_pair(x, tape.param(bad), Var{}, tape.param(tk), Var{}, PadMode::zeros),
                        ShapeError);
    }
}

TEST_CASE("pixel unshuffle")
{
    std::mt19937_64 rng(2);
    const VideoTensor x = random_tensor(Shape{1, 1, 1, 8, 16}, rng);
    const VideoTensor u = pixel_unshuffle(x, 8);
    CHECK(u.shape() == Shape{1, 64, 1, 1, 2});
    CHECK(pixel_shuffle(u, 8).bit_equal(x));
    CHECK(exact_sum(u.data()) == exact_sum(x.data()));
    CHECK(std::accumulate(u.data().begin(), u.data().end(), 0.0) ==
          std::accumulate(x.data().begin(), x.data().end(), 0.0));
    CHECK_THROWS_AS(pixel_unshuffle(VideoTensor(Shape{1, 1, 1, 8, 12}), 8), ShapeError);

    for (int trial = 0; trial < 20; ++trial) {
        const int r = random_int(rng, 1, 4);
        const VideoTensor v = random_tensor(
            Shape{random_int(rng, 1, 2), random_int(rng, 1, 3), random_int(rng, 1, 2), r * random_int(rng, 1, 3),
                  r * random_int(rng, 1, 3)},
            rng);
        REQUIRE(pixel_shuffle(pixel_unshuffle(v, r), r).bit_equal(v));
        const VideoTensor s = random_tensor(Shape{1, 2 * r * r, 1, 2, 3}, rng);
        REQUIRE(pixel_unshuffle(pixel_shuffle(s, r), r).bit_equal(s));
    }
}

TEST_CASE("gradient of a linear loss is exactly its weights")
{
    std::mt19937_64 rng(4);
    const VideoTensor w = random_tensor(Shape{1, 2, 2, 3, 4}, rng);
    Parameter x("x", random_tensor(w.shape(), rng));
    Tape tape;
    const Var loss = ops::weighted_sum(tape.param(x), w);
    tape.backward(loss);
    CHECK(x.grad.bit_equal(w));
}

TEST_CASE("squared norm gradient against finite differences")
{
    std::mt19937_64 rng(6);
    Parameter x("x", random_tensor(Shape{1, 2, 2, 3, 4}, rng));
    Parameter* params[] = {&x};
    const double err = backward_and_check([&](Tape& t) { return ops::square_norm(t.param(x)); }, params,
                                          {1e-3f, 0, 0});
    CHECK(err < 1e-3);
    for (std::size_t i = 0; i < x.value.numel(); ++i)
        CHECK(x.grad.raw()[i] == 2.0f * x.value.raw()[i]);
}

TEST_CASE("backward rejects non-scalar losses")
{
    Parameter x("x", VideoTensor(Shape{1, 1, 1, 2, 2}, 1.0f));
    Tape tape;
    const Var v = tape.param(x);
    CHECK_THROWS_AS(tape.backward(v), ArgumentError);
    Parameter* params[] = {&x};
    CHECK_THROWS_AS(backward_and_check([&](Tape& t) { return t.param(x); }, params), ArgumentError);
}

TEST_CASE("layer gradients match finite differences on random shapes")
{
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 24; ++trial) {
        const PadMode pad = trial % 2 ? PadMode::circular : PadMode::zeros;
        const int stride = trial % 3 == 2 ? 2 : 1;
        const int c = random_int(rng, 1, 3);
        const Shape xs{random_int(rng, 1, 2), c, random_int(rng, 1, 3), 2 * random_int(rng, 2, 3),
                       2 * random_int(rng, 2, 4)};
        Parameter x("x", random_tensor(xs, rng));
        Parameter k("k", random_tensor(Shape{2, c, 1, 3, 3}, rng, -0.5f, 0.5f));
        Parameter b("b", random_tensor(Shape{2, 1, 1, 1, 1}, rng));
        Parameter tk("tk", random_tensor(Shape{2, 2, 3, 1, 1}, rng, -0.5f, 0.5f));
        Parameter tb("tb", random_tensor(Shape{2, 1, 1, 1, 1}, rng));
        Parameter gamma("gamma", random_tensor(Shape{2, 1, 1, 1, 1}, rng, 0.5f, 1.5f));
        Parameter beta("beta", random_tensor(Shape{2, 1, 1, 1, 1}, rng));
        Parameter e("e", random_tensor(Shape{xs.batch, 2, 1, 1, 1}, rng));
        Parameter skip("skip", random_tensor(Shape{xs.batch, 2, xs.frames, xs.height / stride, xs.width / stride}, rng));
        Parameter* params[] = {&x, &k, &b, &tk, &tb, &gamma, &beta, &e, &skip};

        const Shape ys{xs.batch, 2, xs.frames, 2 * (xs.height / stride), 2 * (xs.width / stride)};
        const VideoTensor probe = random_tensor(Shape{ys.batch, 8, ys.frames, ys.height / 2, ys.width / 2}, rng);

        auto loss = [&](Tape& t) {
            Var h = ops::conv2d(t.param(x), t.param(k), t.param(b), stride, pad);
            h = ops::silu(h);
            h = ops::channel_norm(h, t.param(gamma), t.param(beta));
            h = ops::add_channel_bias(h, t.param(e));
            h = ops::temporal_conv(h, t.param(tk), t.param(tb));
            h = ops::add_scaled(h, t.param(skip), 0.7f);
            h = ops::upsample2(h);
            h = ops::pixel_unshuffle(h, 2);
            return ops::weighted_sum(h, probe);
        };
        std::vector<GradCheckSample> report;
        const double err = backward_and_check(loss, params, {4e-2f, 40, static_cast<std::uint64_t>(trial), &report, 4});
        INFO("trial " << trial);
        std::ostringstream worst;
        for (const auto& r : report)
            if (r.rel_error > 1e-2)
                worst << r.param << "[" << r.index << "] auto " << r.autodiff << " fd " << r.finite_difference << "; ";
        INFO(worst.str());
        CHECK(err < 1e-2);
    }
}

TEST_CASE("adam")
{
    SUBCASE("zero gradient leaves parameters unchanged")
    {
        std::mt19937_64 rng(8);
        Parameter p("p", random_tensor(Shape{1, 1, 1, 4, 4}, rng));
        const VideoTensor before = p.value;
        Adam opt({});
        Parameter* ps[] = {&p};
        for (int i = 0; i < 5; ++i)
            opt.step(ps);
        CHECK(p.value.bit_equal(before));
    }
    SUBCASE("first step has magnitude lr")
    {
        Parameter p("p", VideoTensor(Shape{}, 0.5f));
        p.grad = VideoTensor(Shape{}, 1.0f);
        Adam opt({0.01f});
        Parameter* ps[] = {&p};
        opt.step(ps);
        CHECK(0.5f - p.value.raw()[0] == doctest::Approx(0.01).epsilon(1e-5));
    }
    SUBCASE("bit-identical across runs")
    {
        auto run = [] {
            std::mt19937_64 rng(99);
            Parameter p("p", random_tensor(Shape{1, 2, 1, 3, 3}, rng));
            Adam opt({0.05f});
            Parameter* ps[] = {&p};
            for (int i = 0; i < 100; ++i) {
                p.grad = random_tensor(p.value.shape(), rng);
                opt.step(ps);
            }
            return p.value;
        };
        CHECK(run().bit_equal(run()));
    }
    SUBCASE("non-positive learning rate is rejected")
    {
        CHECK_THROWS_AS(Adam({0.0f}), ArgumentError);
        CHECK_THROWS_AS(Adam({-1e-3f}), ArgumentError);
    }
}

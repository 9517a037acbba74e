#pragma once

#include <cstdint>
#include <random>

#include "panolab/autodiff.hpp"
#include "panolab/tensor.hpp"

namespace panolab::testing {

inline VideoTensor random_tensor(Shape s, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f)
{
    std::uniform_real_distribution<float> u(lo, hi);
    VideoTensor t(s);
    for (float& v : t.data())
        v = u(rng);
    return t;
}

inline int random_int(std::mt19937_64& rng, int lo, int hi)
{
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline float max_abs_diff(const VideoTensor& a, const VideoTensor& b)
{
    float worst = 0.0f;
    for (std::size_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::abs(a.raw()[i] - b.raw()[i]));
    return worst;
}

} // namespace panolab::testing

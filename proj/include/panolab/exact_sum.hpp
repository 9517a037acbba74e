#pragma once

#include <cmath>
#include <cstdint>
#include <span>

namespace panolab {

/// Sum whose result does not depend on the order of the terms.
///
/// Every term is quantized independently onto a fixed-point grid derived from
/// the largest magnitude and the term count, then accumulated in 64-bit
/// integers. Integer addition is associative, so any permutation of the input
/// (a cyclic column shift, a different thread partition) gives the same bits.
/// The grid step is 2^-(61 - ceil(log2 n)) relative to the largest term, far
/// below float resolution.
template <class Map>
double exact_sum(std::span<const float> values, Map&& map)
{
    double peak = 0.0;
    for (float v : values) {
        const double m = std::fabs(static_cast<double>(map(v)));
        if (m > peak)
            peak = m;
    }
    if (peak == 0.0 || !std::isfinite(peak))
        return peak == 0.0 ? 0.0 : peak;

    int count_bits = 0;
    while ((std::size_t{1} << count_bits) < values.size())
        ++count_bits;
    const int scale = 61 - std::ilogb(peak) - 1 - count_bits;

    // multiplying by a power of two is exact and much cheaper than ldexp
    const double step = std::ldexp(1.0, scale);
    std::int64_t acc = 0;
    for (float v : values)
        acc += std::llrint(static_cast<double>(map(v)) * step);
    return std::ldexp(static_cast<double>(acc), -scale);
}

inline double exact_sum(std::span<const float> values)
{
    return exact_sum(values, [](float v) { return v; });
}

} // namespace panolab

#pragma once

// Motion adapter: pixel unshuffle, then four blocks of conv + pseudo-3D
// residual block. Blocks 2..4 open with a stride-2 downsample, so the four
// captured features sit at the unshuffled grid and its /2, /4, /8 scales.

#include <array>
#include <cstdint>
#include <optional>

#include "panolab/autodiff.hpp"
#include "panolab/params.hpp"

namespace panolab {

struct AdapterConfig {
    int in_channels = 2;
    std::array<int, 4> channels{16, 32, 64, 64};
    int unshuffle_factor = 8;
    bool zero_init_output = true;
};

using AdapterFeatures = std::array<VideoTensor, 4>;
using FeatureVars = std::array<Var, 4>;

void validate_config(const AdapterConfig& cfg);

/// Height and width of a condition must be multiples of this.
int adapter_divisor(const AdapterConfig& cfg) noexcept;

/// Creates every "adapter." parameter.
void init_adapter(ParamSet& params, const AdapterConfig& cfg, std::uint64_t seed);

FeatureVars adapter_forward(ParamBinder& bind, const Var& condition, const AdapterConfig& cfg, PadMode pad);

/// Inference helper. An empty condition stands for the all-zero condition of
/// `zero_shape`.
AdapterFeatures adapter_forward(ParamSet& params, const std::optional<VideoTensor>& condition,
                                const Shape& zero_shape, const AdapterConfig& cfg, PadMode pad = PadMode::zeros);

/// f + w * f_c per scale; w == 0 returns the encoder features untouched.
std::array<VideoTensor, 4> inject_features(const std::array<VideoTensor, 4>& enc, const AdapterFeatures& feats, float w);
Var inject_feature(const Var& enc, const Var& feat, float w, int scale);

} // namespace panolab

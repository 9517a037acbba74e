#pragma once

// Four-level pseudo-3D U-Net noise predictor with adapter injection points,
// plus the two-phase training step.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "panolab/adapter.hpp"
#include "panolab/diffusion.hpp"
#include "panolab/optim.hpp"
#include "panolab/params.hpp"

namespace panolab {

struct DenoiserConfig {
    int in_channels = 3;
    std::array<int, 4> channels{16, 32, 64, 64};
    int frames = 8;
    int time_dim = 32;
};

void validate_config(const DenoiserConfig& cfg);

/// Creates every "unet." parameter. The output convolution starts at zero.
void init_denoiser(ParamSet& params, const DenoiserConfig& cfg, std::uint64_t seed);

/// Sinusoidal embedding of one timestep per batch entry, shape (B, dim, 1, 1, 1).
VideoTensor timestep_embedding(std::span<const int> t, int dim);

/// eps_hat for z_t. `t` holds one timestep per batch entry. Null features
/// behave exactly like w = 0.
Var unet_forward(ParamBinder& bind, const Var& z_t, std::span<const int> t, const FeatureVars* feats, float w,
                 const DenoiserConfig& cfg, PadMode pad);

/// Inference helper (no gradients), one timestep for the whole batch.
VideoTensor unet_forward(ParamSet& params, const VideoTensor& z_t, int t, const AdapterFeatures* feats, float w,
                         const DenoiserConfig& cfg, PadMode pad = PadMode::zeros);

/// Encoder feature shape of each injection scale for a latent of shape s.
std::array<Shape, 4> encoder_shapes(const Shape& s, const DenoiserConfig& cfg);

enum class Phase { backbone, adapter };

/// Phase backbone trains "unet." and never runs the adapter. Phase adapter
/// trains "adapter." with the backbone frozen. Throws when nothing is trainable.
std::pair<std::vector<Parameter*>, std::vector<Parameter*>> freeze_partition(const ParamSet& params, Phase phase);

struct TrainConfig {
    int steps = 2000;
    int batch = 2;
    double lr = 1e-3;
    double p_zero = 0.2;
    bool latitude_loss = false;
    bool rotation_augment = false;
    std::uint64_t seed = 0;
    float adapter_weight = 1.0f;
};

void validate_config(const TrainConfig& cfg);

struct Model {
    DenoiserConfig unet;
    AdapterConfig adapter;
    ParamSet params;
};

/// Flow in pixels -> adapter condition (both components divided by width).
VideoTensor flow_to_condition(const VideoTensor& flow);

/// What one step drew from the generator; exposed for tests.
struct StepDraws {
    std::vector<int> t;
    std::vector<bool> dropped;
    std::vector<int> shift;
};

/// One optimizer step on a batch of videos in [0, 1] and their flows in
/// pixels. Returns the loss before the update.
double train_step(Model& model, const VideoTensor& video, const VideoTensor& flow, const NoiseSchedule& sched,
                  const TrainConfig& cfg, Phase phase, Adam& opt, std::mt19937_64& rng, StepDraws* draws = nullptr);

/// Per-sample q_sample: batch entry b uses timestep t[b].
VideoTensor q_sample_batch(const VideoTensor& x0, std::span<const int> t, const VideoTensor& eps,
                           const NoiseSchedule& sched);

/// Rolls batch entry b by shift[b] columns.
VideoTensor roll_columns_batch(const VideoTensor& x, std::span<const int> shift);

} // namespace panolab

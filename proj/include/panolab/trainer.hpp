#pragma once

// Dataset assembly, the per-phase training loop and model checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "panolab/panonet.hpp"

namespace panolab {

/// One (1, C, F, H, W) entry per scene.
struct Dataset {
    std::vector<VideoTensor> videos;
    std::vector<VideoTensor> flows;

    std::size_t size() const noexcept { return videos.size(); }
};

/// Scene i uses the i-th draw of a generator seeded with `seed`.
std::vector<std::uint64_t> scene_seeds(std::uint64_t seed, int scenes);
Dataset make_dataset(std::uint64_t seed, int scenes, int frames, int height);

/// Concatenates the chosen entries along the batch axis.
VideoTensor stack_batch(const std::vector<VideoTensor>& items, std::span<const int> indices);

/// The desk-scale configuration: widths 8/16/32/32 for both networks and
/// no unshuffle, so the adapter works directly on the diffused grid.
Model lab_model(std::uint64_t seed, int frames = 8);
Model make_model(const DenoiserConfig& unet, const AdapterConfig& adapter, std::uint64_t seed);

using StepCallback = std::function<void(int step, double loss)>;

/// cfg.steps optimizer steps of one phase. Batches are drawn uniformly with
/// replacement from a generator separate from the step generator, so the
/// flows never influence which scenes or noise are drawn.
std::vector<double> train_phase(Model& model, const Dataset& data, const NoiseSchedule& sched,
                                const TrainConfig& cfg, Phase phase, const StepCallback& on_step = {});

/// Parameters plus "config.*" entries echoing both network configurations.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
/// Rebuilds the model from the echoed configuration. When the file has no
/// adapter parameters, a fresh adapter is initialized from adapter_seed and
/// *adapter_created (if given) is set.
Model load_checkpoint(const std::filesystem::path& path, std::uint64_t adapter_seed = 0,
                      bool* adapter_created = nullptr);

} // namespace panolab

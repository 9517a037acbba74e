#pragma once

// File formats: the "P360" tensor container, binary PPM frames and
// key=value scene files. Failures raise IoError with a distinct kind.
//
// P360 layout, all integers little-endian:
//   "P360"  version byte 0x01  u32 entry count
//   per entry: u32 name length, UTF-8 name, rank byte, rank x u32 extents,
//              f32 payload in row-major order

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "panolab/params.hpp"
#include "panolab/synth.hpp"
#include "panolab/tensor.hpp"

namespace panolab {

struct NamedTensor {
    std::string name;
    VideoTensor value;
};

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& entries);
/// Extents of rank r < 5 fill the trailing axes.
std::vector<NamedTensor> decode_tensors(const std::vector<std::uint8_t>& bytes);

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

/// First entry called `name`; IoError(parse) when absent.
const VideoTensor& find_tensor(const std::vector<NamedTensor>& entries, const std::string& name);

/// Every parameter, in insertion order.
std::vector<NamedTensor> param_entries(const ParamSet& params);
/// Copies entries into existing parameters of the same name and shape.
/// Returns how many were set. Throws ShapeError on a shape mismatch.
std::size_t assign_params(ParamSet& params, const std::vector<NamedTensor>& entries);

/// Byte for a value: round(clamp(v, 0, 1) * 255), halves rounded up.
std::uint8_t to_byte(float v) noexcept;

/// One P6 file per frame, `frame_0000.ppm` upwards. Batch must be 1 and
/// channels 1 (replicated) or 3. Creates `dir` if needed.
std::vector<std::filesystem::path> write_frames_ppm(const VideoTensor& video, const std::filesystem::path& dir);
void write_ppm(const std::filesystem::path& path, const VideoTensor& video, int frame);
/// (1, 3, 1, H, W) with values byte / 255.
VideoTensor read_ppm(const std::filesystem::path& path);
/// Every frame_*.ppm of a directory, in name order, as one video.
VideoTensor read_frames_ppm(const std::filesystem::path& dir);

std::string format_scene(const SceneSpec& spec);
/// One key=value per line; blank lines and lines starting with '#' are
/// skipped. Unknown or repeated keys are rejected.
SceneSpec parse_scene(const std::string& text);
void save_scene(const std::filesystem::path& path, const SceneSpec& spec);
SceneSpec load_scene(const std::filesystem::path& path);

} // namespace panolab

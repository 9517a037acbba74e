#pragma once

// Procedural panoramic videos: angular-Gaussian blobs on the sphere, rotated
// rigidly about one axis, with their exact ERP optical flow.

#include <array>
#include <cstdint>
#include <vector>

#include "panolab/sphere.hpp"
#include "panolab/tensor.hpp"

namespace panolab {

struct Blob {
    Vec3 center{1.0, 0.0, 0.0};
    double width = 0.3; ///< radians
    std::array<double, 3> color{1.0, 1.0, 1.0};
};

struct SceneSpec {
    std::uint64_t seed = 0;
    std::vector<Blob> blobs;
    Vec3 axis{0.0, 0.0, 1.0};
    double omega = 0.0; ///< radians per frame
    int frames = 8;
    int height = 32;
    int width = 64;
};

/// Throws ArgumentError unless width == 2 * height, the axis and centres are
/// unit vectors, widths are positive, colours lie in [0, 1] and |omega| < pi.
void validate_scene(const SceneSpec& spec);

/// Scene drawn from `seed`: 3 to 6 blobs, uniform centres and axis.
SceneSpec random_scene(std::uint64_t seed, int frames, int height);

struct RenderedScene {
    VideoTensor video; ///< (1, 3, frames, H, W), values in [0, 1]
    VideoTensor flow;  ///< (1, 2, frames, H, W), pixels, frame k -> k + 1
};

/// Frame k shows every blob centre rotated by k * omega about the axis,
/// composited as 1 - prod(1 - color * exp(-angle^2 / width^2)).
RenderedScene render_sequence(const SceneSpec& spec);

} // namespace panolab

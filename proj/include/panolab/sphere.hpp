#pragma once

// Equirectangular (ERP) geometry. Pixel (x, y) of a W x H panorama has its
// centre at longitude (x + 0.5) / W * 2pi - pi and latitude
// pi/2 - (y + 0.5) / H * pi. Directions are unit vectors with +x at the
// image centre, +y towards increasing longitude and +z at the north pole.

#include <array>

#include "panolab/tensor.hpp"

namespace panolab {

using Vec3 = std::array<double, 3>;

struct LonLat {
    double lon;
    double lat;
};

/// Continuous pixel coordinates; integer values are pixel centres.
struct ErpPoint {
    double x;
    double y;
};

LonLat erp_pixel_to_lonlat(int x, int y, int width, int height);
Vec3 erp_pixel_to_dir(int x, int y, int width, int height);
Vec3 lonlat_to_dir(LonLat ll) noexcept;
LonLat dir_to_lonlat(const Vec3& d) noexcept;
ErpPoint dir_to_erp(const Vec3& d, int width, int height) noexcept;
/// Nearest pixel to a direction, the inverse of erp_pixel_to_dir on pixel centres.
std::array<int, 2> dir_to_erp_pixel(const Vec3& d, int width, int height) noexcept;

/// Rodrigues rotation of v about the unit axis by angle radians.
Vec3 rotate_about(const Vec3& v, const Vec3& axis, double angle) noexcept;
/// Throws ArgumentError for a (near) zero vector.
Vec3 normalized(const Vec3& v);

/// Bilinear lookup in one H x W plane: wraps horizontally, clamps vertically.
float sample_erp(const float* plane, int width, int height, ErpPoint p) noexcept;

struct SphereCamera {
    double yaw = 0.0;   ///< radians, rotation about +z
    double pitch = 0.0; ///< radians, positive looks towards the north pole
    double fov = 1.5707963267948966;
    int out_size = 64;
};

void validate_camera(const SphereCamera& cam);

/// World direction of perspective pixel (u, v) of the camera.
Vec3 camera_ray(const SphereCamera& cam, double u, double v) noexcept;
/// Continuous perspective pixel hit by a world direction; returns false when
/// the direction points behind the camera.
bool camera_project(const SphereCamera& cam, const Vec3& d, double& u, double& v) noexcept;

/// Gnomonic view of every (batch, channel, frame) plane. The ERP must be 2:1.
VideoTensor erp_to_perspective(const VideoTensor& erp, const SphereCamera& cam);

/// Whole-column longitude rotation by round(width * theta / 2pi) columns.
VideoTensor rotate_erp(const VideoTensor& x, double theta);
int rotation_columns(int width, double theta);

/// Per-pixel ERP displacement (dx, dy) of a rotation by omega about axis,
/// repeated over `frames`. Shape (1, 2, frames, height, width); dx is wrapped
/// into (-width/2, width/2].
VideoTensor rotation_flow(const Vec3& axis, double omega, int width, int height, int frames);

/// Wraps a horizontal displacement into (-width/2, width/2].
double canonical_dx(double dx, int width) noexcept;

} // namespace panolab

#include "panolab/sphere.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "panolab/error.hpp"

namespace panolab {

namespace {

constexpr double pi = std::numbers::pi;

double dot(const Vec3& a, const Vec3& b) noexcept { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 cross(const Vec3& a, const Vec3& b) noexcept
{
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

int wrap(int i, int n) noexcept
{
    const int r = i % n;
    return r < 0 ? r + n : r;
}

void require_erp(const Shape& s)
{
    if (s.width != 2 * s.height)
        throw ShapeError("ERP input must be 2:1 (width == 2*height), got " + s.str());
}

} // namespace

LonLat erp_pixel_to_lonlat(int x, int y, int width, int height)
{
    if (width < 1 || height < 1 || x < 0 || x >= width || y < 0 || y >= height)
        throw ArgumentError("pixel (" + std::to_string(x) + "," + std::to_string(y) + ") outside " +
                            std::to_string(width) + "x" + std::to_string(height) + " ERP");
    return {(x + 0.5) / width * 2.0 * pi - pi, pi / 2.0 - (y + 0.5) / height * pi};
}

Vec3 lonlat_to_dir(LonLat ll) noexcept
{
    const double c = std::cos(ll.lat);
    return {c * std::cos(ll.lon), c * std::sin(ll.lon), std::sin(ll.lat)};
}

Vec3 erp_pixel_to_dir(int x, int y, int width, int height)
{
    return lonlat_to_dir(erp_pixel_to_lonlat(x, y, width, height));
}

LonLat dir_to_lonlat(const Vec3& d) noexcept
{
    const double horizontal = std::hypot(d[0], d[1]);
    return {std::atan2(d[1], d[0]), std::atan2(d[2], horizontal)};
}

ErpPoint dir_to_erp(const Vec3& d, int width, int height) noexcept
{
    const LonLat ll = dir_to_lonlat(d);
    return {(ll.lon + pi) / (2.0 * pi) * width - 0.5, (pi / 2.0 - ll.lat) / pi * height - 0.5};
}

std::array<int, 2> dir_to_erp_pixel(const Vec3& d, int width, int height) noexcept
{
    const ErpPoint p = dir_to_erp(d, width, height);
    const int x = wrap(static_cast<int>(std::lround(p.x)), width);
    const int y = std::clamp(static_cast<int>(std::lround(p.y)), 0, height - 1);
    return {x, y};
}

Vec3 rotate_about(const Vec3& v, const Vec3& axis, double angle) noexcept
{
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const Vec3 kxv = cross(axis, v);
    const double kv = dot(axis, v) * (1.0 - c);
    return {v[0] * c + kxv[0] * s + axis[0] * kv, v[1] * c + kxv[1] * s + axis[1] * kv,
            v[2] * c + kxv[2] * s + axis[2] * kv};
}

Vec3 normalized(const Vec3& v)
{
    const double n = std::sqrt(dot(v, v));
    if (!(n > 1e-12))
        throw ArgumentError("rotation axis must be non-zero");
    return {v[0] / n, v[1] / n, v[2] / n};
}

float sample_erp(const float* plane, int width, int height, ErpPoint p) noexcept
{
    const double fx0 = std::floor(p.x);
    const double fy0 = std::floor(p.y);
    const float tx = static_cast<float>(p.x - fx0);
    const float ty = static_cast<float>(p.y - fy0);
    const int x0 = wrap(static_cast<int>(fx0), width);
    const int x1 = wrap(x0 + 1, width);
    const int y0 = std::clamp(static_cast<int>(fy0), 0, height - 1);
    const int y1 = std::clamp(static_cast<int>(fy0) + 1, 0, height - 1);
    const float* r0 = plane + static_cast<std::size_t>(y0) * width;
    const float* r1 = plane + static_cast<std::size_t>(y1) * width;
    // lerp form a + t(b - a) keeps constant fields exact
    const float top = r0[x0] + tx * (r0[x1] - r0[x0]);
    const float bottom = r1[x0] + tx * (r1[x1] - r1[x0]);
    return top + ty * (bottom - top);
}

void validate_camera(const SphereCamera& cam)
{
    if (!(cam.fov > 0.0 && cam.fov < pi))
        throw ArgumentError("camera fov must lie in (0, pi), got " + std::to_string(cam.fov));
    if (cam.out_size < 1)
        throw ArgumentError("camera out_size must be >= 1");
    if (!(cam.pitch >= -pi / 2.0 && cam.pitch <= pi / 2.0))
        throw ArgumentError("camera pitch must lie in [-pi/2, pi/2]");
}

Vec3 camera_ray(const SphereCamera& cam, double u, double v) noexcept
{
    const double half = std::tan(cam.fov / 2.0);
    const double a = ((u + 0.5) / cam.out_size * 2.0 - 1.0) * half;
    const double b = (1.0 - (v + 0.5) / cam.out_size * 2.0) * half;
    const double n = std::sqrt(1.0 + a * a + b * b);
    // camera frame: forward (1,0,0), right (0,1,0), up (0,0,1)
    const double fx = 1.0 / n, ry = a / n, uz = b / n;
    const double cp = std::cos(cam.pitch), sp = std::sin(cam.pitch);
    const double x1 = fx * cp - uz * sp;
    const double z1 = fx * sp + uz * cp;
    const double cy = std::cos(cam.yaw), sy = std::sin(cam.yaw);
    return {x1 * cy - ry * sy, x1 * sy + ry * cy, z1};
}

bool camera_project(const SphereCamera& cam, const Vec3& d, double& u, double& v) noexcept
{
    const double cy = std::cos(cam.yaw), sy = std::sin(cam.yaw);
    const double x1 = d[0] * cy + d[1] * sy;
    const double ry = -d[0] * sy + d[1] * cy;
    const double cp = std::cos(cam.pitch), sp = std::sin(cam.pitch);
    const double fx = x1 * cp + d[2] * sp;
    const double uz = -x1 * sp + d[2] * cp;
    if (!(fx > 0.0))
        return false;
    const double half = std::tan(cam.fov / 2.0);
    u = ((ry / fx) / half + 1.0) / 2.0 * cam.out_size - 0.5;
    v = (1.0 - (uz / fx) / half) / 2.0 * cam.out_size - 0.5;
    return true;
}

VideoTensor erp_to_perspective(const VideoTensor& erp, const SphereCamera& cam)
{
    require_erp(erp.shape());
    validate_camera(cam);
    const Shape& s = erp.shape();
    const int n = cam.out_size;
    std::vector<ErpPoint> lookup(static_cast<std::size_t>(n) * n);
    for (int v = 0; v < n; ++v)
        for (int u = 0; u < n; ++u)
            lookup[static_cast<std::size_t>(v) * n + u] = dir_to_erp(camera_ray(cam, u, v), s.width, s.height);

    VideoTensor out(Shape{s.batch, s.channels, s.frames, n, n});
    for (int b = 0; b < s.batch; ++b)
        for (int c = 0; c < s.channels; ++c)
            for (int f = 0; f < s.frames; ++f) {
                const float* src = erp.plane(b, c, f);
                float* dst = out.plane(b, c, f);
                for (std::size_t i = 0; i < lookup.size(); ++i)
                    dst[i] = sample_erp(src, s.width, s.height, lookup[i]);
            }
    return out;
}

int rotation_columns(int width, double theta)
{
    double t = std::fmod(theta, 2.0 * pi);
    if (t < 0.0)
        t += 2.0 * pi;
    return wrap(static_cast<int>(std::lround(width * t / (2.0 * pi))), width);
}

VideoTensor rotate_erp(const VideoTensor& x, double theta)
{
    return roll_columns(x, rotation_columns(x.shape().width, theta));
}

double canonical_dx(double dx, int width) noexcept
{
    const double half = width / 2.0;
    dx = std::fmod(dx, static_cast<double>(width));
    if (dx > half)
        dx -= width;
    else if (dx <= -half)
        dx += width;
    return dx;
}

VideoTensor rotation_flow(const Vec3& axis_in, double omega, int width, int height, int frames)
{
    const Vec3 axis = normalized(axis_in);
    if (!(std::abs(omega) < pi))
        throw ArgumentError("rotation_flow needs |omega| < pi");
    validate_shape(Shape{1, 2, frames, height, width}, "rotation_flow");
    VideoTensor flow(Shape{1, 2, frames, height, width});

    // About the polar axis the longitude shift is the same everywhere; compute
    // it once so the field is exactly constant.
    const bool polar = axis[0] == 0.0 && axis[1] == 0.0;
    const double polar_dx = canonical_dx((axis[2] > 0 ? omega : -omega) / (2.0 * pi) * width, width);

    float* fx = flow.plane(0, 0, 0);
    float* fy = flow.plane(0, 1, 0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * width + x;
            if (omega == 0.0) {
                fx[i] = fy[i] = 0.0f;
                continue;
            }
            if (polar) {
                fx[i] = static_cast<float>(polar_dx);
                fy[i] = 0.0f;
                continue;
            }
            const Vec3 d = rotate_about(erp_pixel_to_dir(x, y, width, height), axis, omega);
            const ErpPoint p = dir_to_erp(d, width, height);
            fx[i] = static_cast<float>(canonical_dx(p.x - x, width));
            fy[i] = static_cast<float>(p.y - y);
        }
    for (int f = 1; f < frames; ++f) {
        std::copy(fx, fx + flow.shape().plane(), flow.plane(0, 0, f));
        std::copy(fy, fy + flow.shape().plane(), flow.plane(0, 1, f));
    }
    return flow;
}

} // namespace panolab

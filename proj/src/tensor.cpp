#include "panolab/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>

#include "panolab/error.hpp"

namespace panolab {

std::string Shape::str() const
{
    std::ostringstream os;
    os << '(' << batch << ',' << channels << ',' << frames << ',' << height << ',' << width << ')';
    return os.str();
}

void validate_shape(const Shape& s, const char* what)
{
    if (s.batch < 1 || s.channels < 1 || s.frames < 1 || s.height < 1 || s.width < 1)
        throw ShapeError(std::string(what) + ": every extent must be >= 1, got " + s.str());
}

void require_same_shape(const Shape& a, const Shape& b, const char* what)
{
    if (!(a == b))
        throw ShapeError(std::string(what) + ": shape " + a.str() + " does not match " + b.str());
}

VideoTensor::VideoTensor(Shape shape, float fill) : shape_(shape)
{
    validate_shape(shape, "VideoTensor");
    data_.assign(shape.numel(), fill);
}

VideoTensor::VideoTensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data))
{
    validate_shape(shape, "VideoTensor");
    if (data_.size() != shape.numel())
        throw ShapeError("VideoTensor: payload of " + std::to_string(data_.size()) +
                         " values does not fit shape " + shape.str());
}

void VideoTensor::fill(float v)
{
    for (auto& e : data_)
        e = v;
}

bool VideoTensor::all_finite() const noexcept
{
    for (float v : data_)
        if (!std::isfinite(v))
            return false;
    return true;
}

bool VideoTensor::bit_equal(const VideoTensor& o) const noexcept
{
    return shape_ == o.shape_ &&
           std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(float)) == 0;
}

VideoTensor roll_columns(const VideoTensor& x, int k)
{
    const Shape& s = x.shape();
    const int w = s.width;
    const int shift = ((k % w) + w) % w;
    VideoTensor out(s);
    const std::size_t rows = s.numel() / w;
    const float* src = x.raw();
    float* dst = out.raw();
    for (std::size_t r = 0; r < rows; ++r) {
        const float* in = src + r * w;
        float* o = dst + r * w;
        for (int j = 0; j < w; ++j) {
            int from = j + shift;
            if (from >= w)
                from -= w;
            o[j] = in[from];
        }
    }
    return out;
}

std::uint64_t checksum(const VideoTensor& x) noexcept
{
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    const Shape& s = x.shape();
    const int ext[5] = {s.batch, s.channels, s.frames, s.height, s.width};
    mix(ext, sizeof(ext));
    mix(x.raw(), x.numel() * sizeof(float));
    return h;
}

} // namespace panolab

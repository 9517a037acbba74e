#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace panolab {

/// Extents of a (batch, channels, frames, height, width) tensor.
struct Shape {
    int batch = 1;
    int channels = 1;
    int frames = 1;
    int height = 1;
    int width = 1;

    std::size_t numel() const noexcept
    {
        return static_cast<std::size_t>(batch) * channels * frames * height * width;
    }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }

    bool operator==(const Shape&) const = default;

    std::string str() const;
};

/// Dense row-major float32 tensor ordered (batch, channels, frames, height, width).
/// Carries videos, latents, noise, flows, kernels and features alike.
class VideoTensor {
public:
    VideoTensor() : data_(1, 0.0f) {}
    explicit VideoTensor(Shape shape, float fill = 0.0f);
    VideoTensor(Shape shape, std::vector<float> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t numel() const noexcept { return data_.size(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    float* raw() noexcept { return data_.data(); }
    const float* raw() const noexcept { return data_.data(); }

    std::size_t index(int b, int c, int f, int y, int x) const noexcept
    {
        return (((static_cast<std::size_t>(b) * shape_.channels + c) * shape_.frames + f) *
                    shape_.height + y) * shape_.width + x;
    }
    float& at(int b, int c, int f, int y, int x) noexcept { return data_[index(b, c, f, y, x)]; }
    float at(int b, int c, int f, int y, int x) const noexcept { return data_[index(b, c, f, y, x)]; }

    /// Pointer to the contiguous height*width plane of (b, c, f).
    float* plane(int b, int c, int f) noexcept { return data_.data() + index(b, c, f, 0, 0); }
    const float* plane(int b, int c, int f) const noexcept { return data_.data() + index(b, c, f, 0, 0); }

    void fill(float v);
    bool all_finite() const noexcept;

    bool operator==(const VideoTensor& o) const noexcept
    {
        return shape_ == o.shape_ && data_ == o.data_;
    }

    /// Bitwise equality (distinguishes -0 from +0, treats identical NaN payloads as equal).
    bool bit_equal(const VideoTensor& o) const noexcept;

private:
    Shape shape_;
    std::vector<float> data_;
};

/// Throws ShapeError unless every extent is at least one.
void validate_shape(const Shape& s, const char* what);

/// Throws ShapeError naming both shapes when they differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

/// Cyclic column shift: out[..., j] = in[..., (j + k) mod width].
VideoTensor roll_columns(const VideoTensor& x, int k);

/// Bitwise FNV-1a digest of a tensor's payload and shape.
std::uint64_t checksum(const VideoTensor& x) noexcept;

} // namespace panolab

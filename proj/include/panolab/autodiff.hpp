#pragma once

// Reverse-mode differentiation over VideoTensor values.
//
// A Tape records every op applied during one forward pass together with a
// closure that maps the op's output gradient onto its inputs. `backward()`
// replays the closures in reverse recording order. Parameters enter the tape
// through `Tape::param`; their gradients accumulate into Parameter::grad.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "panolab/kernels.hpp"
#include "panolab/tensor.hpp"

namespace panolab {

/// A named trainable tensor and its gradient accumulator (same shape).
struct Parameter {
    std::string name;
    VideoTensor value;
    VideoTensor grad;

    Parameter() = default;
    Parameter(std::string n, VideoTensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = VideoTensor(value.shape()); }
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;

    bool valid() const noexcept { return tape_ != nullptr; }
    const VideoTensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape& tape() const { return *tape_; }
    int id() const noexcept { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

enum class GradMode { on, off };

class Tape {
public:
    using Backward = std::function<void(const VideoTensor& grad_out)>;

    explicit Tape(GradMode mode = GradMode::on) : mode_(mode) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Value that never receives a gradient.
    Var constant(VideoTensor value);
    /// Leaf whose gradient can be read back with grad() after backward().
    Var input(VideoTensor value);
    /// Leaf bound to a parameter; gradients are added to p.grad when trainable.
    Var param(Parameter& p, bool trainable = true);

    /// Records an op output. `backward` is dropped when no gradient is needed.
    Var record(VideoTensor value, bool requires_grad, Backward backward);

    const VideoTensor& value(const Var& v) const { return nodes_[v.id_].value; }
    bool requires_grad(const Var& v) const { return v.valid() && nodes_[v.id_].requires_grad; }
    /// Gradient of the last backward() with respect to a leaf; zeros if none reached it.
    VideoTensor grad(const Var& v) const;
    /// Double-precision value of a scalar reduction (NaN for non-reductions).
    double scalar(const Var& v) const;
    void set_scalar(const Var& v, double s) { nodes_[v.id_].scalar = s; }

    /// Adds g into v's gradient (no-op when v does not require one).
    void accumulate(const Var& v, const VideoTensor& g);

    /// Seeds d(loss)/d(loss) = 1 and propagates. Throws ArgumentError unless
    /// loss holds exactly one element.
    void backward(const Var& loss);

    GradMode mode() const noexcept { return mode_; }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        VideoTensor value;
        VideoTensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        bool leaf = false;
        Backward backward;
        double scalar;
    };

    GradMode mode_;
    std::vector<Node> nodes_;
};

/// Differentiable ops. Every op validates shapes and throws ShapeError naming
/// the offending shapes.
namespace ops {

/// Same-padded spatial convolution applied to every frame. `bias` may be an
/// invalid Var (no bias).
Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride, PadMode pad);
/// Convolution along the frames axis with zero padding of kt/2 frames each end.
Var temporal_conv(const Var& x, const Var& kernel, const Var& bias);
/// Spatial (1x3x3) then temporal (3x1x1) convolution, channels preserved.
Var pseudo3d_pair(const Var& x, const Var& spatial_kernel, const Var& spatial_bias,
                  const Var& temporal_kernel, const Var& temporal_bias, PadMode pad);
Var channel_norm(const Var& x, const Var& gamma, const Var& beta);
Var silu(const Var& x);
Var add(const Var& a, const Var& b);
/// a + w * b
Var add_scaled(const Var& a, const Var& b, float w);
Var scale(const Var& x, float s);
/// x (B,C,F,H,W) plus a per-(batch, channel) bias e (B,C,1,1,1).
Var add_channel_bias(const Var& x, const Var& e);
/// Nearest-neighbour 2x spatial upsampling.
Var upsample2(const Var& x);
Var pixel_unshuffle(const Var& x, int r);
Var pixel_shuffle(const Var& x, int r);
/// sum of all elements (scalar)
Var sum(const Var& x);
/// sum(w ⊙ x) for a constant weight tensor of the same shape (scalar)
Var weighted_sum(const Var& x, const VideoTensor& w);
/// sum of squares (scalar)
Var square_norm(const Var& x);

} // namespace ops

/// Space-to-depth rearrangement: (B,C,F,H,W) -> (B,C*r*r,F,H/r,W/r); output
/// channel c*r*r + dy*r + dx holds input pixel (y*r + dy, x*r + dx).
VideoTensor pixel_unshuffle(const VideoTensor& x, int r);
/// Exact inverse of pixel_unshuffle.
VideoTensor pixel_shuffle(const VideoTensor& x, int r);

struct GradCheckSample {
    std::string param;
    std::size_t index;
    double autodiff;
    double finite_difference;
    double rel_error;
};

struct GradCheckOptions {
    float step = 1e-3f;
    int coordinates = 10; ///< 0 checks every coordinate
    std::uint64_t seed = 0;
    std::vector<GradCheckSample>* report = nullptr; ///< optional per-coordinate log
    /// 2: (L(x+h) - L(x-h)) / 2h. 4: fourth-order five-point stencil, which
    /// tolerates the larger steps float32 forward passes need.
    int stencil = 2;
    /// Steps tried per coordinate: step * 2^k for k < rungs. With more than
    /// one, the estimate that changes least on the next rung is used, which
    /// picks a step per coordinate between rounding noise and truncation.
    int rungs = 1;
    /// Denominator floor of the relative error: gradients below it are in
    /// effect compared with absolute tolerance tol * floor.
    double floor = 1e-8;
};

/// Compares tape gradients of a scalar loss against central finite
/// differences at sampled parameter coordinates. Returns the largest
/// |g_auto - g_fd| / max(|g_auto|, |g_fd|, floor). The loss function must build
/// a deterministic graph through Tape::param on the given parameters.
double backward_and_check(const std::function<Var(Tape&)>& loss_fn,
                          std::span<Parameter* const> params, const GradCheckOptions& opts = {});

} // namespace panolab

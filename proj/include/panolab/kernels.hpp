#pragma once

// Compute kernels behind the differentiable ops.
//
// Two implementations share one contract:
//   panolab::kernels             OpenMP-parallel, vectorizable loop nests
//   panolab::kernels::reference  one output element at a time, serial
//
// Both define the same accumulation order for every output element, so their
// results are bit-identical (the test suite checks this). Parallelism is only
// over independent output elements; no partial sums are merged across threads.
//
// Weight layouts:
//   spatial kernel  (C_out, C_in, 1, k, k), k odd
//   temporal kernel (C_out, C_in, kt, 1, 1), kt odd
//   bias, gamma, beta (C, 1, 1, 1, 1)

#include <vector>

#include "panolab/tensor.hpp"

namespace panolab {

/// Horizontal padding of spatial convolutions. Vertical padding is always zeros:
/// the poles are not wraparound.
enum class PadMode { zeros, circular };

namespace kernels {

/// Gradients requested from a backward kernel; null members are skipped.
struct GradTargets {
    VideoTensor* input = nullptr;
    VideoTensor* kernel = nullptr;
    VideoTensor* bias = nullptr;
};

/// Per (batch, channel) statistics saved by channel_norm_forward.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> rstd;
};

/// Throws unless x, kernel, bias and stride fit a spatial convolution.
void check_conv2d(const Shape& x, const Shape& kernel, const VideoTensor* bias, int stride,
                  PadMode pad);
void check_temporal(const Shape& x, const Shape& kernel, const VideoTensor* bias);

VideoTensor conv2d_forward(const VideoTensor& x, const VideoTensor& kernel,
                           const VideoTensor* bias, int stride, PadMode pad);
void conv2d_backward(const VideoTensor& x, const VideoTensor& kernel, int stride, PadMode pad,
                     const VideoTensor& grad_out, GradTargets grads);

VideoTensor temporal_conv_forward(const VideoTensor& x, const VideoTensor& kernel,
                                  const VideoTensor* bias);
void temporal_conv_backward(const VideoTensor& x, const VideoTensor& kernel,
                            const VideoTensor& grad_out, GradTargets grads);

/// Per-channel standardization over (frames, height, width) with learned
/// scale and shift. Statistics use order-independent sums.
VideoTensor channel_norm_forward(const VideoTensor& x, const VideoTensor& gamma,
                                 const VideoTensor& beta, float eps, NormStats& stats);
/// grads.kernel receives d/dgamma, grads.bias d/dbeta.
void channel_norm_backward(const VideoTensor& x, const VideoTensor& gamma,
                           const NormStats& stats, const VideoTensor& grad_out,
                           GradTargets grads);

VideoTensor silu_forward(const VideoTensor& x);
VideoTensor silu_backward(const VideoTensor& x, const VideoTensor& grad_out);

namespace reference {

VideoTensor conv2d_forward(const VideoTensor& x, const VideoTensor& kernel,
                           const VideoTensor* bias, int stride, PadMode pad);
void conv2d_backward(const VideoTensor& x, const VideoTensor& kernel, int stride, PadMode pad,
                     const VideoTensor& grad_out, GradTargets grads);

VideoTensor temporal_conv_forward(const VideoTensor& x, const VideoTensor& kernel,
                                  const VideoTensor* bias);
void temporal_conv_backward(const VideoTensor& x, const VideoTensor& kernel,
                            const VideoTensor& grad_out, GradTargets grads);

VideoTensor channel_norm_forward(const VideoTensor& x, const VideoTensor& gamma,
                                 const VideoTensor& beta, float eps, NormStats& stats);
void channel_norm_backward(const VideoTensor& x, const VideoTensor& gamma,
                           const NormStats& stats, const VideoTensor& grad_out,
                           GradTargets grads);

VideoTensor silu_forward(const VideoTensor& x);
VideoTensor silu_backward(const VideoTensor& x, const VideoTensor& grad_out);

} // namespace reference

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int thread_count();

} // namespace kernels
} // namespace panolab

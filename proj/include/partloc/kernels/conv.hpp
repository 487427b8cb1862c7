#pragma once

#include <cstddef>
#include <span>

namespace partloc::kernels {

/// Geometry of one NCHW convolution. Weights are [out_channels, in_channels,
/// kernel_h, kernel_w]; out_h/out_w and the top/left padding are resolved by
/// the caller.
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::ptrdiff_t pad_top = 0;
  std::ptrdiff_t pad_left = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;

  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t output_size() const {
    return batch * out_channels * out_h * out_w;
  }
  std::size_t weight_size() const {
    return out_channels * in_channels * kernel_h * kernel_w;
  }
};

enum class Padding { same, valid };

/// Output extents and leading padding for a given input extent. "same" pads
/// so the output is ceil(in / stride), splitting any odd total toward the
/// bottom/right.
struct AxisPlan {
  std::size_t out = 0;
  std::ptrdiff_t pad_before = 0;
};
AxisPlan plan_axis(std::size_t in, std::size_t kernel, std::size_t stride,
                   std::size_t dilation, Padding padding);

ConvGeometry make_geometry(std::size_t batch, std::size_t in_channels,
                           std::size_t in_h, std::size_t in_w,
                           std::size_t out_channels, std::size_t kernel_h,
                           std::size_t kernel_w, std::size_t stride,
                           std::size_t dilation, Padding padding);

// Serial nested-loop kernels. These are the test oracle for the parallel
// path and the baseline of the benchmark; keep them obviously correct.
namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> weights, std::span<const T> bias,
                    std::span<T> output);

// The two backward kernels accumulate into their outputs.
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weights,
                           std::span<T> grad_input);

template <typename T>
void conv2d_backward_weights(const ConvGeometry& g, std::span<const T> grad_out,
                             std::span<const T> input, std::span<T> grad_weights,
                             std::span<T> grad_bias);

}  // namespace reference

// OpenMP kernels: im2col plus row-parallel GEMM. Every output element is
// reduced by a single thread in a fixed order, so results do not depend on
// the thread count.
namespace parallel {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> weights, std::span<const T> bias,
                    std::span<T> output);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weights,
                           std::span<T> grad_input);

template <typename T>
void conv2d_backward_weights(const ConvGeometry& g, std::span<const T> grad_out,
                             std::span<const T> input, std::span<T> grad_weights,
                             std::span<T> grad_bias);

}  // namespace parallel

}  // namespace partloc::kernels

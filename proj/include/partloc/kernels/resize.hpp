#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace partloc::kernels {

/// Per-axis interpolation taps for half-pixel-centered bilinear resampling.
struct ResizeTaps {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;
};
ResizeTaps resize_taps(std::size_t in, std::size_t out);

/// Resizes `planes` planes of in_h×in_w to out_h×out_w.
template <typename T>
void resize_bilinear_forward(std::size_t planes, std::size_t in_h, std::size_t in_w,
                             std::size_t out_h, std::size_t out_w,
                             std::span<const T> input, std::span<T> output);

/// Adjoint of resize_bilinear_forward; accumulates into grad_input.
template <typename T>
void resize_bilinear_backward(std::size_t planes, std::size_t in_h, std::size_t in_w,
                              std::size_t out_h, std::size_t out_w,
                              std::span<const T> grad_out, std::span<T> grad_input);

}  // namespace partloc::kernels

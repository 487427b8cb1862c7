#include "partloc/kernels/resize.hpp"

#include <algorithm>
#include <cmath>

namespace partloc::kernels {

ResizeTaps resize_taps(std::size_t in, std::size_t out) {
  ResizeTaps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps.lo[o] = lo;
    taps.hi[o] = std::min(lo + 1, in - 1);
    taps.frac[o] = src - static_cast<double>(lo);
  }
  return taps;
}

template <typename T>
void resize_bilinear_forward(std::size_t planes, std::size_t in_h, std::size_t in_w,
                             std::size_t out_h, std::size_t out_w,
                             std::span<const T> input, std::span<T> output) {
  const ResizeTaps rows = resize_taps(in_h, out_h);
  const ResizeTaps cols = resize_taps(in_w, out_w);
  const auto count = static_cast<std::ptrdiff_t>(planes);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < count; ++p) {
    const T* src = input.data() + p * in_h * in_w;
    T* dst = output.data() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const T fy = static_cast<T>(rows.frac[y]);
      const T* r0 = src + rows.lo[y] * in_w;
      const T* r1 = src + rows.hi[y] * in_w;
      for (std::size_t x = 0; x < out_w; ++x) {
        const T fx = static_cast<T>(cols.frac[x]);
        const T top = r0[cols.lo[x]] * (T{1} - fx) + r0[cols.hi[x]] * fx;
        const T bottom = r1[cols.lo[x]] * (T{1} - fx) + r1[cols.hi[x]] * fx;
        dst[y * out_w + x] = top * (T{1} - fy) + bottom * fy;
      }
    }
  }
}

template <typename T>
void resize_bilinear_backward(std::size_t planes, std::size_t in_h, std::size_t in_w,
                              std::size_t out_h, std::size_t out_w,
                              std::span<const T> grad_out, std::span<T> grad_input) {
  const ResizeTaps rows = resize_taps(in_h, out_h);
  const ResizeTaps cols = resize_taps(in_w, out_w);
  const auto count = static_cast<std::ptrdiff_t>(planes);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < count; ++p) {
    const T* go = grad_out.data() + p * out_h * out_w;
    T* gi = grad_input.data() + p * in_h * in_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const T fy = static_cast<T>(rows.frac[y]);
      T* r0 = gi + rows.lo[y] * in_w;
      T* r1 = gi + rows.hi[y] * in_w;
      for (std::size_t x = 0; x < out_w; ++x) {
        const T fx = static_cast<T>(cols.frac[x]);
        const T g = go[y * out_w + x];
        r0[cols.lo[x]] += g * (T{1} - fy) * (T{1} - fx);
        r0[cols.hi[x]] += g * (T{1} - fy) * fx;
        r1[cols.lo[x]] += g * fy * (T{1} - fx);
        r1[cols.hi[x]] += g * fy * fx;
      }
    }
  }
}

template void resize_bilinear_forward<float>(std::size_t, std::size_t, std::size_t,
                                             std::size_t, std::size_t,
                                             std::span<const float>, std::span<float>);
template void resize_bilinear_forward<double>(std::size_t, std::size_t, std::size_t,
                                              std::size_t, std::size_t,
                                              std::span<const double>, std::span<double>);
template void resize_bilinear_backward<float>(std::size_t, std::size_t, std::size_t,
                                              std::size_t, std::size_t,
                                              std::span<const float>, std::span<float>);
template void resize_bilinear_backward<double>(std::size_t, std::size_t, std::size_t,
                                               std::size_t, std::size_t,
                                               std::span<const double>, std::span<double>);

}  // namespace partloc::kernels

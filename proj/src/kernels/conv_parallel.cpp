#include <algorithm>
#include <vector>

#include "partloc/kernels/conv.hpp"

namespace partloc::kernels::parallel {

namespace {

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.pad_top == 0 &&
         g.pad_left == 0;
}

// Valid output column range [lo, hi) for kernel column offset `shift` so that
// ow * stride + shift stays inside [0, extent).
void column_range(std::ptrdiff_t shift, std::size_t stride, std::size_t extent,
                  std::size_t out_w, std::size_t& lo, std::size_t& hi) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto e = static_cast<std::ptrdiff_t>(extent);
  std::ptrdiff_t first = shift >= 0 ? 0 : (-shift + s - 1) / s;
  std::ptrdiff_t last = e - shift <= 0 ? 0 : (e - shift + s - 1) / s;
  first = std::clamp<std::ptrdiff_t>(first, 0, static_cast<std::ptrdiff_t>(out_w));
  last = std::clamp<std::ptrdiff_t>(last, first, static_cast<std::ptrdiff_t>(out_w));
  lo = static_cast<std::size_t>(first);
  hi = static_cast<std::size_t>(last);
}

// Expands the kernel rows owned by input channel `ci` into
// col[kh*kw][out_h*out_w].
template <typename T>
void im2col_channel(const ConvGeometry& g, const T* plane, T* col) {
  const std::size_t spatial = g.out_h * g.out_w;
  for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
    for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
      T* row = col + (kh * g.kernel_w + kw) * spatial;
      const std::ptrdiff_t col_shift =
          static_cast<std::ptrdiff_t>(kw * g.dilation) - g.pad_left;
      std::size_t lo = 0, hi = 0;
      column_range(col_shift, g.stride, g.in_w, g.out_w, lo, hi);
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        T* dst = row + oh * g.out_w;
        const std::ptrdiff_t ih =
            static_cast<std::ptrdiff_t>(oh * g.stride + kh * g.dilation) - g.pad_top;
        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) {
          std::fill(dst, dst + g.out_w, T{0});
          continue;
        }
        const T* src = plane + ih * g.in_w;
        std::fill(dst, dst + lo, T{0});
        if (g.stride == 1) {
          const T* s = src + col_shift;
          for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = s[ow];
        } else {
          for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = src[ow * g.stride + col_shift];
        }
        std::fill(dst + hi, dst + g.out_w, T{0});
      }
    }
  }
}

// Scatter-adds col rows for channel `ci` back into the input-gradient plane.
template <typename T>
void col2im_channel(const ConvGeometry& g, const T* col, T* plane) {
  const std::size_t spatial = g.out_h * g.out_w;
  for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
    for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
      const T* row = col + (kh * g.kernel_w + kw) * spatial;
      const std::ptrdiff_t col_shift =
          static_cast<std::ptrdiff_t>(kw * g.dilation) - g.pad_left;
      std::size_t lo = 0, hi = 0;
      column_range(col_shift, g.stride, g.in_w, g.out_w, lo, hi);
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        const std::ptrdiff_t ih =
            static_cast<std::ptrdiff_t>(oh * g.stride + kh * g.dilation) - g.pad_top;
        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
        const T* src = row + oh * g.out_w;
        T* dst = plane + ih * g.in_w;
        for (std::size_t ow = lo; ow < hi; ++ow) dst[ow * g.stride + col_shift] += src[ow];
      }
    }
  }
}

template <typename T>
std::vector<T> build_columns(const ConvGeometry& g, const T* image) {
  const std::size_t taps = g.kernel_h * g.kernel_w;
  const std::size_t spatial = g.out_h * g.out_w;
  std::vector<T> col(g.in_channels * taps * spatial);
  const auto channels = static_cast<std::ptrdiff_t>(g.in_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < channels; ++ci) {
    im2col_channel(g, image + ci * g.in_h * g.in_w, col.data() + ci * taps * spatial);
  }
  return col;
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> weights, std::span<const T> bias,
                    std::span<T> output) {
  const std::size_t depth = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t spatial = g.out_h * g.out_w;
  constexpr std::size_t block = 4;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* image = input.data() + n * g.in_channels * g.in_h * g.in_w;
    std::vector<T> col;
    const T* columns = image;
    if (!is_pointwise(g)) {
      col = build_columns(g, image);
      columns = col.data();
    }
    T* out = output.data() + n * g.out_channels * spatial;
    const auto groups = static_cast<std::ptrdiff_t>((g.out_channels + block - 1) / block);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t grp = 0; grp < groups; ++grp) {
      const std::size_t co0 = static_cast<std::size_t>(grp) * block;
      const std::size_t rows = std::min(block, g.out_channels - co0);
      for (std::size_t r = 0; r < rows; ++r) {
        std::fill(out + (co0 + r) * spatial, out + (co0 + r + 1) * spatial,
                  bias.empty() ? T{0} : bias[co0 + r]);
      }
      if (rows == block) {
        T* o0 = out + co0 * spatial;
        T* o1 = o0 + spatial;
        T* o2 = o1 + spatial;
        T* o3 = o2 + spatial;
        const T* w0 = weights.data() + co0 * depth;
        const T* w1 = w0 + depth;
        const T* w2 = w1 + depth;
        const T* w3 = w2 + depth;
        for (std::size_t k = 0; k < depth; ++k) {
          const T a0 = w0[k], a1 = w1[k], a2 = w2[k], a3 = w3[k];
          const T* c = columns + k * spatial;
#pragma omp simd
          for (std::size_t p = 0; p < spatial; ++p) {
            const T v = c[p];
            o0[p] += a0 * v;
            o1[p] += a1 * v;
            o2[p] += a2 * v;
            o3[p] += a3 * v;
          }
        }
      } else {
        for (std::size_t r = 0; r < rows; ++r) {
          T* o = out + (co0 + r) * spatial;
          const T* w = weights.data() + (co0 + r) * depth;
          for (std::size_t k = 0; k < depth; ++k) {
            const T a = w[k];
            const T* c = columns + k * spatial;
#pragma omp simd
            for (std::size_t p = 0; p < spatial; ++p) o[p] += a * c[p];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weights, std::span<T> grad_input) {
  const std::size_t taps = g.kernel_h * g.kernel_w;
  const std::size_t depth = g.in_channels * taps;
  const std::size_t spatial = g.out_h * g.out_w;
  const bool pointwise = is_pointwise(g);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* gout = grad_out.data() + n * g.out_channels * spatial;
    T* gin = grad_input.data() + n * g.in_channels * g.in_h * g.in_w;
    const auto channels = static_cast<std::ptrdiff_t>(g.in_channels);
#pragma omp parallel
    {
      std::vector<T> local(pointwise ? 0 : taps * spatial);
#pragma omp for schedule(static)
      for (std::ptrdiff_t ci = 0; ci < channels; ++ci) {
        T* rows = pointwise ? gin + ci * spatial : local.data();
        if (!pointwise) std::fill(local.begin(), local.end(), T{0});
        for (std::size_t co = 0; co < g.out_channels; ++co) {
          const T* go = gout + co * spatial;
          const T* w = weights.data() + co * depth + ci * taps;
          for (std::size_t t = 0; t < taps; ++t) {
            const T a = w[t];
            T* dst = rows + t * spatial;
#pragma omp simd
            for (std::size_t p = 0; p < spatial; ++p) dst[p] += a * go[p];
          }
        }
        if (!pointwise) col2im_channel(g, local.data(), gin + ci * g.in_h * g.in_w);
      }
    }
  }
}

template <typename T>
void conv2d_backward_weights(const ConvGeometry& g, std::span<const T> grad_out,
                             std::span<const T> input, std::span<T> grad_weights,
                             std::span<T> grad_bias) {
  const std::size_t depth = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t spatial = g.out_h * g.out_w;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* image = input.data() + n * g.in_channels * g.in_h * g.in_w;
    std::vector<T> col;
    const T* columns = image;
    if (!is_pointwise(g)) {
      col = build_columns(g, image);
      columns = col.data();
    }
    const T* gout = grad_out.data() + n * g.out_channels * spatial;
    const auto channels = static_cast<std::ptrdiff_t>(g.out_channels);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t co = 0; co < channels; ++co) {
      const T* go = gout + co * spatial;
      T* gw = grad_weights.data() + co * depth;
      for (std::size_t k = 0; k < depth; ++k) {
        const T* c = columns + k * spatial;
        T acc{0};
#pragma omp simd reduction(+ : acc)
        for (std::size_t p = 0; p < spatial; ++p) acc += go[p] * c[p];
        gw[k] += acc;
      }
      if (!grad_bias.empty()) {
        T acc{0};
#pragma omp simd reduction(+ : acc)
        for (std::size_t p = 0; p < spatial; ++p) acc += go[p];
        grad_bias[co] += acc;
      }
    }
  }
}

#define PARTLOC_INSTANTIATE(T)                                                      \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>,         \
                                  std::span<const T>, std::span<const T>,          \
                                  std::span<T>);                                   \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,  \
                                         std::span<const T>, std::span<T>);        \
  template void conv2d_backward_weights<T>(const ConvGeometry&, std::span<const T>, \
                                           std::span<const T>, std::span<T>,       \
                                           std::span<T>);

PARTLOC_INSTANTIATE(float)
PARTLOC_INSTANTIATE(double)

#undef PARTLOC_INSTANTIATE

}  // namespace partloc::kernels::parallel
